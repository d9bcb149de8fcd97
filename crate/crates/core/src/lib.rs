//! Longitudinal inverse classification.
//!
//! Given a calibrated kernel classifier over features partitioned into
//! immutable, directly mutable and indirectly mutable groups, find the
//! budget-constrained change to the direct features that minimizes an
//! instance's predicted outcome probability. Past-visit risk enters as an
//! immutable feature, and optimized instances are re-scored with the
//! immutable values observed at the next visit.

pub mod classifier;
pub mod config;
pub mod data;
pub mod experiments;
pub mod impute;
pub mod indirect;
pub mod inverse;
pub mod kernel;
pub mod longitudinal;
pub mod matrix;
pub mod metrics;
pub mod seeding;
