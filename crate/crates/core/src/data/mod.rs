//! Feature schemas, instances, longitudinal cohorts and their file formats.

mod cohort;
mod io;
mod scaling;
mod schema;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use cohort::{Instance, LongitudinalCohort, VisitData};
pub use io::{load_cohort, save_cohort, visit_file, SchemaDocument};
pub use scaling::{MinMax, MinMaxScaler};
pub use schema::{risk_feature_name, Direction, FeatureSchema, FeatureSpec, Role, ValueKind};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("row width {found} does not match schema width {expected}")]
    RowWidth { expected: usize, found: usize },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("cohort invariant violated: {0}")]
    Invariant(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
