//! TOML run configuration.
//!
//! ```toml
//! [generator]
//! n_patients = 4000
//! visits = 3
//!
//! [plan]
//! seed = 1
//! budget = 1.0
//! budgets = [0.5, 1.0, 2.0]
//!
//! [optimizer]
//! max_iters = 1000
//!
//! [pipeline.classifier]
//! c_grid = [0.1, 1.0, 10.0]
//! ```
//!
//! Every table and key is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::{EvaluationPlan, GeneratorSpec};
use crate::impute::ImputerParams;
use crate::inverse::OptimizerConfig;
use crate::longitudinal::PipelineConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration in {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub generator: GeneratorSpec,
    pub plan: EvaluationPlan,
    pub optimizer: OptimizerConfig,
    pub pipeline: PipelineConfig,
    /// Settings of the imputer comparison.
    pub imputers: ImputerParams,
}

impl StudyConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Apply command-line overrides; the seed drives both the generator and
    /// the partition.
    pub fn with_overrides(mut self, seed: Option<u64>, budget: Option<f64>) -> Self {
        if let Some(s) = seed {
            self.plan.seed = s;
        }
        if let Some(b) = budget {
            self.plan.budget = b;
        }
        self
    }
}
