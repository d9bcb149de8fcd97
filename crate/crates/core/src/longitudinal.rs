//! Per-visit model training with past-risk features and missing-feature
//! imputation, plus re-scoring of optimized instances with the immutable
//! values observed at the next visit.
//!
//! The vector for an id at visit `v` is its visit-`v` row in master-schema
//! order, with absent features imputed, followed by `r_1 .. r_{v-1}`, where
//! `r_k` is the visit-`k` model's probability for the id's visit-`k` vector.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::{
    select_params, train_calibrated, CalibratedClassifier, ClassifierConfig, ClassifierError, SvmParams,
};
use crate::data::{DataError, FeatureSchema, Instance, LongitudinalCohort, Role, ValueKind, VisitData};
use crate::impute::{fit_imputer, ImputeError, ImputeMethod, ImputerModel, ImputerParams};
use crate::indirect::{select_bandwidth, IndirectConfig, IndirectError, IndirectModel};
use crate::inverse::InverseError;
use crate::matrix::{DimensionMismatch, Matrix};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Indirect(#[from] IndirectError),
    #[error(transparent)]
    Impute(#[from] ImputeError),
    #[error(transparent)]
    Inverse(#[from] InverseError),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("id `{id}` is not present at visit {visit}")]
    MissingInstance { id: String, visit: u32 },
    #[error("no model for visit {0}")]
    MissingBundle(u32),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: recorded hash {expected} but file hashes to {found}")]
    HashMismatch { path: PathBuf, expected: String, found: String },
    #[error("{0}")]
    Invalid(String),
}

/// Records every `(visit, column)` read through a [`CohortReader`].
#[derive(Debug, Default)]
pub struct AccessLog {
    reads: Mutex<BTreeSet<(u32, String)>>,
}

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn touch(&self, vd: &VisitData) {
        let mut reads = self.reads.lock().expect("access log poisoned");
        if reads.contains(&(vd.v(), "label".to_string())) {
            return;
        }
        for name in vd.schema().names() {
            reads.insert((vd.v(), name.to_string()));
        }
        reads.insert((vd.v(), "label".to_string()));
    }

    pub fn reads(&self) -> BTreeSet<(u32, String)> {
        self.reads.lock().expect("access log poisoned").clone()
    }

    pub fn max_visit(&self) -> Option<u32> {
        self.reads().iter().map(|(v, _)| *v).max()
    }

    pub fn clear(&self) {
        self.reads.lock().expect("access log poisoned").clear();
    }
}

/// Cohort access that can be instrumented.
#[derive(Debug, Clone, Copy)]
pub struct CohortReader<'a> {
    cohort: &'a LongitudinalCohort,
    log: Option<&'a AccessLog>,
}

impl<'a> CohortReader<'a> {
    pub fn new(cohort: &'a LongitudinalCohort) -> Self {
        Self { cohort, log: None }
    }

    pub fn logged(cohort: &'a LongitudinalCohort, log: &'a AccessLog) -> Self {
        Self { cohort, log: Some(log) }
    }

    pub fn schema(&self) -> &'a FeatureSchema {
        self.cohort.schema()
    }

    /// Visit data without recording a read; for id bookkeeping only.
    pub fn ids_at(&self, v: u32) -> Vec<String> {
        self.cohort
            .visit(v)
            .map(|vd| vd.ids().map(str::to_string).collect())
            .unwrap_or_default()
    }

    pub fn visit_schema(&self, v: u32) -> Option<&'a FeatureSchema> {
        self.cohort.visit(v).map(VisitData::schema)
    }

    pub fn row(&self, v: u32, id: &str) -> Option<(&'a Instance, bool)> {
        let vd = self.cohort.visit(v)?;
        if let Some(log) = self.log {
            log.touch(vd);
        }
        vd.get(id)
    }

    fn require(&self, v: u32, id: &str) -> Result<(&'a Instance, bool), PipelineError> {
        self.row(v, id).ok_or_else(|| PipelineError::MissingInstance {
            id: id.to_string(),
            visit: v,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputationConfig {
    pub continuous: ImputeMethod,
    pub binary: ImputeMethod,
    pub params: ImputerParams,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        Self {
            continuous: ImputeMethod::Ridge,
            binary: ImputeMethod::Logistic,
            params: ImputerParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub classifier: ClassifierConfig,
    pub indirect: IndirectConfig,
    pub imputation: ImputationConfig,
    /// Append past-visit risk features.
    pub use_risk: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig::default(),
            indirect: IndirectConfig::default(),
            imputation: ImputationConfig::default(),
            use_risk: true,
        }
    }
}

/// Maps a visit-`v` row to a master-order vector, imputing absent features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub v: u32,
    /// Visit-`v` column of each master feature, if observed there.
    present: Vec<Option<usize>>,
    /// `(master index, model)` for every absent feature.
    imputers: Vec<(usize, ImputerModel)>,
}

impl Preprocessor {
    /// Fit imputers for the features absent at `v` on the visit-1 rows of
    /// `train_ids`, using the features observed at `v` as inputs.
    pub fn fit(
        reader: &CohortReader,
        v: u32,
        train_ids: &[String],
        cfg: &ImputationConfig,
    ) -> Result<Self, PipelineError> {
        let master = reader.schema();
        let vschema = reader.visit_schema(v).ok_or(PipelineError::MissingBundle(v))?;
        let present: Vec<Option<usize>> = master.names().map(|n| vschema.index_of(n)).collect();
        let input_names: Vec<String> = vschema.names().map(str::to_string).collect();
        let input_master: Vec<usize> = input_names.iter().map(|n| master.index_of(n).unwrap()).collect();
        let missing: Vec<usize> = (0..master.len()).filter(|&j| present[j].is_none()).collect();
        let mut imputers = Vec::new();
        if !missing.is_empty() {
            let mut x = Matrix::with_cols(input_master.len());
            let mut rows = Vec::new();
            for id in train_ids {
                if let Some((inst, _)) = reader.row(1, id) {
                    let r: Vec<f64> = input_master.iter().map(|&j| inst.values[j]).collect();
                    x.push_row(&r)?;
                    rows.push(inst);
                }
            }
            for j in missing {
                let spec = master.feature(j);
                let method = match spec.kind {
                    ValueKind::Continuous => cfg.continuous,
                    ValueKind::Binary => cfg.binary,
                };
                let t: Vec<f64> = rows.iter().map(|inst| inst.values[j]).collect();
                let m = fit_imputer(method, &spec.name, spec.kind, &input_names, &x, &t, &cfg.params)?;
                imputers.push((j, m));
            }
        }
        Ok(Self { v, present, imputers })
    }

    pub fn imputers(&self) -> impl Iterator<Item = &ImputerModel> {
        self.imputers.iter().map(|(_, m)| m)
    }

    /// Master-order vector of `id` at this visit.
    pub fn base_vector(&self, reader: &CohortReader, id: &str) -> Result<Vec<f64>, PipelineError> {
        let (inst, _) = reader.require(self.v, id)?;
        let mut out: Vec<f64> = self
            .present
            .iter()
            .map(|p| p.map(|c| inst.values[c]).unwrap_or(f64::NAN))
            .collect();
        for (j, m) in &self.imputers {
            let prior = if m.method == ImputeMethod::CarryForward {
                self.last_observed(reader, id, *j)
            } else {
                None
            };
            out[*j] = m.impute(&inst.values, prior)?;
        }
        Ok(out)
    }

    /// Most recent earlier value of master feature `j`.
    fn last_observed(&self, reader: &CohortReader, id: &str, j: usize) -> Option<f64> {
        let name = &reader.schema().feature(j).name;
        (1..self.v).rev().find_map(|k| {
            let col = reader.visit_schema(k)?.index_of(name)?;
            reader.row(k, id).map(|(inst, _)| inst.values[col])
        })
    }
}

/// Everything needed to score and optimize instances at one visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitModelBundle {
    pub v: u32,
    pub base_schema: FeatureSchema,
    /// Base schema plus `risk_1 .. risk_{v-1}` when risk is used.
    pub augmented_schema: FeatureSchema,
    pub preprocessor: Preprocessor,
    pub classifier: CalibratedClassifier,
    pub phi: Option<IndirectModel>,
    pub svm_params: SvmParams,
    pub phi_sigma: Option<f64>,
    pub use_risk: bool,
    pub training_ids: Vec<String>,
}

impl VisitModelBundle {
    pub fn predict(&self, x: &[f64]) -> Result<f64, PipelineError> {
        Ok(self.classifier.predict_proba(x)?)
    }

    pub fn n_risk(&self) -> usize {
        self.augmented_schema.len() - self.base_schema.len()
    }
}

/// Vector of `id` at visit `v`: `pre`'s base vector followed by the risk
/// of each prior visit under `prior` (empty when risk is not used).
pub fn augment_with_risk(
    reader: &CohortReader,
    prior: &[VisitModelBundle],
    pre: &Preprocessor,
    use_risk: bool,
    id: &str,
) -> Result<Vec<f64>, PipelineError> {
    let mut base = pre.base_vector(reader, id)?;
    if use_risk {
        base.extend(risk_features(reader, prior, id)?);
    }
    Ok(base)
}

/// `r_1 .. r_k` for `id`, one per bundle in `prior`, each computed on the
/// id's own vector at that visit.
pub fn risk_features(reader: &CohortReader, prior: &[VisitModelBundle], id: &str) -> Result<Vec<f64>, PipelineError> {
    let mut risks = Vec::with_capacity(prior.len());
    for (k, b) in prior.iter().enumerate() {
        if b.v != k as u32 + 1 {
            return Err(PipelineError::MissingBundle(k as u32 + 1));
        }
        let mut x = b.preprocessor.base_vector(reader, id)?;
        x.extend(&risks);
        risks.push(b.predict(&x)?);
    }
    Ok(risks)
}

/// Assembled vector of `id` at visit `v` using a trained chain.
pub fn assemble(chain: &[VisitModelBundle], reader: &CohortReader, v: u32, id: &str) -> Result<Vec<f64>, PipelineError> {
    let b = chain.get(v as usize - 1).ok_or(PipelineError::MissingBundle(v))?;
    augment_with_risk(reader, &chain[..v as usize - 1], &b.preprocessor, b.use_risk, id)
}

/// Assembled rows and labels for the ids present at `v`.
pub fn training_rows(
    reader: &CohortReader,
    prior: &[VisitModelBundle],
    pre: &Preprocessor,
    use_risk: bool,
    v: u32,
    ids: &[String],
) -> Result<(Matrix, Vec<bool>, Vec<String>), PipelineError> {
    let width = reader.schema().len() + if use_risk { prior.len() } else { 0 };
    let mut x = Matrix::with_cols(width);
    let mut y = Vec::new();
    let mut used = Vec::new();
    for id in ids {
        let Some((_, label)) = reader.row(v, id) else {
            continue;
        };
        let row = augment_with_risk(reader, prior, pre, use_risk, id)?;
        x.push_row(&row)?;
        y.push(label);
        used.push(id.clone());
    }
    Ok((x, y, used))
}

/// Split assembled rows into the estimator's `[x_D, x_U]` inputs and `x_I`
/// targets.
pub fn indirect_training_data(schema: &FeatureSchema, x: &Matrix) -> (Matrix, Matrix) {
    let d = schema.indices(Role::Direct);
    let u = schema.indices(Role::Immutable);
    let i = schema.indices(Role::Indirect);
    let cols: Vec<usize> = d.iter().chain(&u).copied().collect();
    (x.select_cols(&cols), x.select_cols(&i))
}

/// Hyperparameters carried over from an earlier fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedHyperparameters {
    pub svm: SvmParams,
    pub phi_sigma: Option<f64>,
}

/// Train the visit-`v` bundle on `train_ids`, given the bundles of visits
/// `1 .. v-1`.
pub fn train_visit_bundle(
    reader: &CohortReader,
    v: u32,
    prior: &[VisitModelBundle],
    train_ids: &[String],
    cfg: &PipelineConfig,
    fixed: Option<FixedHyperparameters>,
) -> Result<VisitModelBundle, PipelineError> {
    if prior.len() + 1 != v as usize {
        return Err(PipelineError::MissingBundle(prior.len() as u32 + 1));
    }
    let base_schema = reader.schema().clone();
    let augmented_schema = if cfg.use_risk {
        base_schema.with_risk_features(prior.len())?
    } else {
        base_schema.clone()
    };
    let pre = Preprocessor::fit(reader, v, train_ids, &cfg.imputation)?;
    let (x, y, used) = training_rows(reader, prior, &pre, cfg.use_risk, v, train_ids)?;
    let phi = if augmented_schema.indices(Role::Indirect).is_empty() {
        None
    } else {
        let (inputs, targets) = indirect_training_data(&augmented_schema, &x);
        let nd = augmented_schema.indices(Role::Direct).len();
        let sigma = match fixed.and_then(|f| f.phi_sigma) {
            Some(s) => s,
            None => select_bandwidth(&inputs, &targets, nd, &cfg.indirect)?,
        };
        Some(IndirectModel::new(inputs, targets, nd, sigma)?)
    };
    let svm_params = match fixed {
        Some(f) => f.svm,
        None => select_params(&x, &y, &cfg.classifier)?.0,
    };
    let mut classifier = train_calibrated(&x, &y, &svm_params, cfg.classifier.platt_folds)?;
    classifier.schema_hash = Some(augmented_schema.hash());
    Ok(VisitModelBundle {
        v,
        base_schema,
        augmented_schema,
        preprocessor: pre,
        phi_sigma: phi.as_ref().map(|p| p.kernel().sigma()),
        classifier,
        phi,
        svm_params,
        use_risk: cfg.use_risk,
        training_ids: used,
    })
}

/// Train bundles for visits `1 ..= visits` in order on `train_ids`.
pub fn train_chain(
    reader: &CohortReader,
    visits: u32,
    train_ids: &[String],
    cfg: &PipelineConfig,
) -> Result<Vec<VisitModelBundle>, PipelineError> {
    let mut chain: Vec<VisitModelBundle> = Vec::new();
    for v in 1..=visits {
        let b = train_visit_bundle(reader, v, &chain, train_ids, cfg, None)?;
        chain.push(b);
    }
    Ok(chain)
}

/// Replace the base immutable block of `optimized` with `next_base`'s
/// values, keep the risk features, and re-estimate the indirect block from
/// the new immutables and the unchanged direct block.
pub fn rescore_vector(bundle: &VisitModelBundle, optimized: &[f64], next_base: &[f64]) -> Result<Vec<f64>, PipelineError> {
    let schema = &bundle.augmented_schema;
    if optimized.len() != schema.len() || next_base.len() != bundle.base_schema.len() {
        return Err(PipelineError::Invalid("vector width does not match the bundle".into()));
    }
    let mut x = optimized.to_vec();
    for j in bundle.base_schema.indices(Role::Immutable) {
        x[j] = next_base[j];
    }
    if let Some(phi) = &bundle.phi {
        let u: Vec<f64> = schema.indices(Role::Immutable).iter().map(|&j| x[j]).collect();
        let d: Vec<f64> = schema.indices(Role::Direct).iter().map(|&j| x[j]).collect();
        for (&j, v) in schema.indices(Role::Indirect).iter().zip(phi.estimate(&u, &d)?) {
            x[j] = v;
        }
    }
    Ok(x)
}

/// Probability of the optimized instance under the bundle's classifier with
/// the next visit's immutable values.
pub fn rescore_with_future_immutables(
    bundle: &VisitModelBundle,
    optimized: &[f64],
    next_base: &[f64],
) -> Result<f64, PipelineError> {
    bundle.predict(&rescore_vector(bundle, optimized, next_base)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub visit: u32,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_hash: String,
    pub use_risk: bool,
    pub bundles: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write one JSON file per bundle plus `manifest.json` with their hashes.
pub fn save_chain(chain: &[VisitModelBundle], dir: &Path) -> Result<Manifest, PipelineError> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut bundles = Vec::new();
    for b in chain {
        let file = format!("bundle_v{}.json", b.v);
        let path = dir.join(&file);
        let json = serde_json::to_vec(b).map_err(|source| PipelineError::Json {
            path: path.clone(),
            source,
        })?;
        write(&path, &json)?;
        bundles.push(ManifestEntry {
            visit: b.v,
            file,
            sha256: sha256_hex(&json),
        });
    }
    let manifest = Manifest {
        schema_hash: chain.first().map(|b| b.base_schema.hash()).unwrap_or_default(),
        use_risk: chain.first().is_some_and(|b| b.use_risk),
        bundles,
    };
    let path = dir.join("manifest.json");
    let mut json = serde_json::to_vec_pretty(&manifest).map_err(|source| PipelineError::Json {
        path: path.clone(),
        source,
    })?;
    json.push(b'\n');
    write(&path, &json)?;
    Ok(manifest)
}

/// Load a chain written by [`save_chain`], verifying every file hash.
pub fn load_chain(dir: &Path) -> Result<Vec<VisitModelBundle>, PipelineError> {
    let path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_slice(&read(&path)?).map_err(|source| PipelineError::Json { path, source })?;
    let mut chain = Vec::new();
    for (k, e) in manifest.bundles.iter().enumerate() {
        if e.visit != k as u32 + 1 {
            return Err(PipelineError::MissingBundle(k as u32 + 1));
        }
        let path = dir.join(&e.file);
        let bytes = read(&path)?;
        let found = sha256_hex(&bytes);
        if found != e.sha256 {
            return Err(PipelineError::HashMismatch {
                path,
                expected: e.sha256.clone(),
                found,
            });
        }
        let b: VisitModelBundle = serde_json::from_slice(&bytes).map_err(|source| PipelineError::Json { path, source })?;
        chain.push(b);
    }
    Ok(chain)
}
