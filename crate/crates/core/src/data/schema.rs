//! Feature schema: per-feature role, value kind, cost, direction and bounds.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DataError;

/// Which partition a feature belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Cannot be changed (age, sex, past risk).
    Immutable,
    /// Changed directly by the individual; the optimization variables.
    Direct,
    /// Changes only through the others; estimated by kernel regression.
    Indirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Continuous,
    Binary,
}

/// Permitted direction of change for a direct feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "increase", alias = "+1")]
    Increase,
    #[serde(rename = "decrease", alias = "-1")]
    Decrease,
    #[serde(rename = "free")]
    Free,
}

impl Direction {
    /// Diagonal entry of the signature matrix, `None` for unsigned features.
    pub fn sign(self) -> Option<f64> {
        match self {
            Direction::Increase => Some(1.0),
            Direction::Decrease => Some(-1.0),
            Direction::Free => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub role: Role,
    pub kind: ValueKind,
    /// Cost per unit change; direct features only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    /// Declared value domain in raw (unscaled) units.
    pub lower: f64,
    pub upper: f64,
}

impl FeatureSpec {
    pub fn immutable(name: &str, kind: ValueKind, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_string(),
            role: Role::Immutable,
            kind,
            cost: None,
            direction: None,
            lower,
            upper,
        }
    }

    pub fn indirect(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_string(),
            role: Role::Indirect,
            kind: ValueKind::Continuous,
            cost: None,
            direction: None,
            lower,
            upper,
        }
    }

    pub fn direct(
        name: &str,
        kind: ValueKind,
        cost: f64,
        direction: Direction,
        lower: f64,
        upper: f64,
    ) -> Self {
        Self {
            name: name.to_string(),
            role: Role::Direct,
            kind,
            cost: Some(cost),
            direction: Some(direction),
            lower,
            upper,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        let bad = |reason: &str| DataError::InvalidSchema(format!("feature `{}`: {reason}", self.name));
        if self.name.is_empty() || self.name == "id" || self.name == "label" {
            return Err(bad("reserved or empty name"));
        }
        if !(self.lower <= self.upper) {
            return Err(bad("lower must not exceed upper"));
        }
        if self.kind == ValueKind::Binary && (self.lower != 0.0 || self.upper != 1.0) {
            return Err(bad("binary features must have lower=0 and upper=1"));
        }
        match self.role {
            Role::Direct => {
                let cost = self.cost.ok_or_else(|| bad("direct feature needs a cost"))?;
                if !(cost >= 0.0) || !cost.is_finite() {
                    return Err(bad("cost must be finite and nonnegative"));
                }
                if self.direction.is_none() {
                    return Err(bad("direct feature needs a direction"));
                }
            }
            Role::Immutable | Role::Indirect => {
                if self.cost.is_some() || self.direction.is_some() {
                    return Err(bad("cost and direction are only defined for direct features"));
                }
            }
        }
        Ok(())
    }
}

/// Ordered feature list. Every feature vector in the crate is aligned to
/// the declaration order of some schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FeatureSpec>", into = "Vec<FeatureSpec>")]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
}

impl TryFrom<Vec<FeatureSpec>> for FeatureSchema {
    type Error = DataError;

    fn try_from(features: Vec<FeatureSpec>) -> Result<Self, Self::Error> {
        Self::new(features)
    }
}

impl From<FeatureSchema> for Vec<FeatureSpec> {
    fn from(s: FeatureSchema) -> Self {
        s.features
    }
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self, DataError> {
        let mut seen = BTreeSet::new();
        for f in &features {
            f.validate()?;
            if !seen.insert(f.name.as_str()) {
                return Err(DataError::InvalidSchema(format!("duplicate feature `{}`", f.name)));
            }
        }
        Ok(Self { features })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &FeatureSpec {
        &self.features[i]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Restriction to the named features, keeping this schema's order.
    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> Result<Self, DataError> {
        let wanted: BTreeSet<&str> = names.iter().map(|s| s.as_ref()).collect();
        for w in &wanted {
            if !self.contains(w) {
                return Err(DataError::UnknownFeature(w.to_string()));
            }
        }
        Ok(Self {
            features: self
                .features
                .iter()
                .filter(|f| wanted.contains(f.name.as_str()))
                .cloned()
                .collect(),
        })
    }

    /// True when every feature here appears, identically specified, in `other`.
    pub fn is_subset_of(&self, other: &FeatureSchema) -> bool {
        self.features
            .iter()
            .all(|f| other.index_of(&f.name).is_some_and(|j| other.features[j] == *f))
    }

    /// Appends `count` past-risk features `risk_1..risk_count` as immutable
    /// continuous features on the unit interval.
    pub fn with_risk_features(&self, count: usize) -> Result<Self, DataError> {
        let mut features = self.features.clone();
        for k in 1..=count {
            features.push(FeatureSpec::immutable(
                &risk_feature_name(k),
                ValueKind::Continuous,
                0.0,
                1.0,
            ));
        }
        Self::new(features)
    }

    /// Split a vector into its immutable, direct and indirect blocks.
    pub fn split(&self, values: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), DataError> {
        if values.len() != self.len() {
            return Err(DataError::RowWidth {
                expected: self.len(),
                found: values.len(),
            });
        }
        let pick = |role| self.indices(role).into_iter().map(|i| values[i]).collect();
        Ok((pick(Role::Immutable), pick(Role::Direct), pick(Role::Indirect)))
    }

    /// Inverse of [`FeatureSchema::split`].
    pub fn merge(&self, immutable: &[f64], direct: &[f64], indirect: &[f64]) -> Result<Vec<f64>, DataError> {
        let (u, d, i) = (
            self.indices(Role::Immutable),
            self.indices(Role::Direct),
            self.indices(Role::Indirect),
        );
        for (idx, block) in [(&u, immutable), (&d, direct), (&i, indirect)] {
            if idx.len() != block.len() {
                return Err(DataError::RowWidth {
                    expected: idx.len(),
                    found: block.len(),
                });
            }
        }
        let mut out = vec![0.0; self.len()];
        for (idx, block) in [(u, immutable), (d, direct), (i, indirect)] {
            for (j, v) in idx.into_iter().zip(block) {
                out[j] = *v;
            }
        }
        Ok(out)
    }

    /// Hex SHA-256 of the canonical JSON form; ties model artifacts to a schema.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.features).expect("schema serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub fn risk_feature_name(k: usize) -> String {
    format!("risk_{k}")
}
