//! Box and budget constraints on the direct features, and the Euclidean
//! projection onto their intersection.

use serde::{Deserialize, Serialize};

use super::InverseError;
use crate::data::{Direction, FeatureSchema, Role};
use crate::matrix::DimensionMismatch;

/// Bisection steps allowed when solving for the budget multiplier.
pub const BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    /// The unoptimized direct values `x̄_D`.
    pub origin: Vec<f64>,
    pub costs: Vec<f64>,
    pub directions: Vec<Direction>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub budget: f64,
}

/// Bounds for one feature: increase-only features may rise to `max(1, x̄)`,
/// decrease-only features may fall to `min(0, x̄)`, free features may do
/// either.
pub fn direction_bounds(direction: Direction, origin: f64) -> (f64, f64) {
    match direction {
        Direction::Increase => (origin, origin.max(1.0)),
        Direction::Decrease => (origin.min(0.0), origin),
        Direction::Free => (origin.min(0.0), origin.max(1.0)),
    }
}

impl FeasibleRegion {
    pub fn new(origin: Vec<f64>, costs: Vec<f64>, directions: Vec<Direction>, budget: f64) -> Result<Self, InverseError> {
        DimensionMismatch::check(origin.len(), directions.len())?;
        let (lower, upper) = origin
            .iter()
            .zip(&directions)
            .map(|(&o, &d)| direction_bounds(d, o))
            .unzip();
        Self::with_bounds(origin, costs, directions, lower, upper, budget)
    }

    /// Region with explicit bounds; the origin must lie inside them.
    pub fn with_bounds(
        origin: Vec<f64>,
        costs: Vec<f64>,
        directions: Vec<Direction>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        budget: f64,
    ) -> Result<Self, InverseError> {
        let n = origin.len();
        for len in [costs.len(), directions.len(), lower.len(), upper.len()] {
            DimensionMismatch::check(n, len)?;
        }
        if !(budget >= 0.0) || !budget.is_finite() {
            return Err(InverseError::InvalidRegion(format!("budget must be a nonnegative finite number, got {budget}")));
        }
        for j in 0..n {
            if !(costs[j] >= 0.0) || !costs[j].is_finite() {
                return Err(InverseError::InvalidRegion(format!("cost {j} is {}", costs[j])));
            }
            if !(lower[j] <= origin[j] && origin[j] <= upper[j]) {
                return Err(InverseError::InvalidRegion(format!(
                    "origin {} outside [{}, {}] at {j}",
                    origin[j], lower[j], upper[j]
                )));
            }
        }
        Ok(Self {
            origin,
            costs,
            directions,
            lower,
            upper,
            budget,
        })
    }

    /// Region for the direct block of a full schema-aligned vector.
    pub fn from_schema(schema: &FeatureSchema, x: &[f64], budget: f64) -> Result<Self, InverseError> {
        DimensionMismatch::check(schema.len(), x.len())?;
        let idx = schema.indices(Role::Direct);
        let origin = idx.iter().map(|&j| x[j]).collect();
        let costs = idx.iter().map(|&j| schema.feature(j).cost.unwrap_or(0.0)).collect();
        let directions = idx
            .iter()
            .map(|&j| schema.feature(j).direction.unwrap_or(Direction::Free))
            .collect();
        Self::new(origin, costs, directions, budget)
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    /// Same region with a different budget.
    pub fn with_budget(&self, budget: f64) -> Result<Self, InverseError> {
        Self::with_bounds(
            self.origin.clone(),
            self.costs.clone(),
            self.directions.clone(),
            self.lower.clone(),
            self.upper.clone(),
            budget,
        )
    }

    /// `c' |x - x̄|`. Inside the box every signed feature moves only in its
    /// permitted direction, so this equals the signed cost.
    pub fn cost(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.origin)
            .zip(&self.costs)
            .map(|((a, o), c)| c * (a - o).abs())
            .sum()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(j, &v)| self.lower[j] <= v && v <= self.upper[j])
            && self.cost(x) <= self.budget + tol
    }

    fn shrunk(&self, z: &[f64], lambda: f64, out: &mut [f64]) {
        for j in 0..z.len() {
            let d = z[j] - self.origin[j];
            let t = lambda * self.costs[j];
            let s = if d > t {
                d - t
            } else if d < -t {
                d + t
            } else {
                0.0
            };
            out[j] = (self.origin[j] + s).clamp(self.lower[j], self.upper[j]);
        }
    }

    /// Euclidean projection onto the box intersected with the budget
    /// halfspace. Clips first; if the budget is still exceeded, bisects on
    /// the multiplier `λ` of `x_j(λ) = clip(x̄_j + shrink(z_j - x̄_j, λ c_j))`
    /// and returns the feasible end of the final bracket.
    pub fn project(&self, z: &[f64], tol: f64) -> Result<Vec<f64>, InverseError> {
        DimensionMismatch::check(self.dim(), z.len())?;
        let mut x: Vec<f64> = (0..z.len()).map(|j| z[j].clamp(self.lower[j], self.upper[j])).collect();
        if self.cost(&x) <= self.budget {
            return Ok(x);
        }
        let mut hi = 0.0f64;
        for j in 0..z.len() {
            if self.costs[j] > 0.0 {
                hi = hi.max((z[j] - self.origin[j]).abs() / self.costs[j]);
            }
        }
        let mut lo = 0.0;
        let mut buf = vec![0.0; z.len()];
        self.shrunk(z, hi, &mut buf);
        let mut best = buf.clone();
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            self.shrunk(z, mid, &mut buf);
            if self.cost(&buf) > self.budget {
                lo = mid;
            } else {
                hi = mid;
                best.copy_from_slice(&buf);
            }
        }
        let slack = self.budget - self.cost(&best);
        if slack > tol * self.budget.max(1.0) {
            return Err(InverseError::ProjectionNotConverged { slack });
        }
        x.copy_from_slice(&best);
        Ok(x)
    }
}
