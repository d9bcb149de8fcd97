//! On-disk formats.
//!
//! A cohort is a directory of `visit1.csv`, `visit2.csv`, ... files with a
//! header of `id`, the feature columns observed at that visit, and `label`.
//! Features missing at a visit are absent columns. The schema is a JSON
//! document:
//!
//! ```json
//! {
//!   "features": [
//!     {"name": "age", "role": "immutable", "kind": "continuous", "lower": 40, "upper": 90},
//!     {"name": "exercise", "role": "direct", "kind": "continuous",
//!      "cost": 1.0, "direction": "increase", "lower": 0, "upper": 15}
//!   ],
//!   "scaling": {"age": {"min": 45.0, "max": 65.0}}
//! }
//! ```
//!
//! `direction` is one of `increase` (`+1`), `decrease` (`-1`) or `free`;
//! `cost` and `direction` appear on direct features only. `scaling` holds
//! the min-max statistics of continuous features and may be omitted.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, FeatureSchema, Instance, LongitudinalCohort, MinMaxScaler, VisitData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDocument {
    pub features: FeatureSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<MinMaxScaler>,
}

impl SchemaDocument {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut text = serde_json::to_string_pretty(self).expect("schema serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| DataError::io(path, e))
    }
}

pub fn visit_file(dir: &Path, v: u32) -> PathBuf {
    dir.join(format!("visit{v}.csv"))
}

/// Load every `visitN.csv` in `dir` (N = 1, 2, ... until a file is absent)
/// against the master schema at `schema_path`.
pub fn load_cohort(dir: &Path, schema_path: &Path) -> Result<LongitudinalCohort, DataError> {
    let doc = SchemaDocument::load(schema_path)?;
    let first = visit_file(dir, 1);
    if !first.exists() {
        return Err(DataError::io(
            &first,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no visit1.csv"),
        ));
    }
    let mut visits = Vec::new();
    let mut v = 1;
    loop {
        let path = visit_file(dir, v);
        if !path.exists() {
            break;
        }
        visits.push(read_visit(&path, v, &doc.features)?);
        v += 1;
    }
    LongitudinalCohort::new(doc.features, visits)
}

fn read_visit(path: &Path, v: u32, master: &FeatureSchema) -> Result<VisitData, DataError> {
    let parse_err = |message: String| DataError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();

    let mut id_col = None;
    let mut label_col = None;
    let mut feature_cols: Vec<(usize, &str)> = Vec::new();
    for (c, name) in headers.iter().enumerate() {
        match name {
            "id" if id_col.is_none() => id_col = Some(c),
            "label" if label_col.is_none() => label_col = Some(c),
            other => {
                if !master.contains(other) {
                    return Err(DataError::UnknownFeature(other.to_string()));
                }
                if feature_cols.iter().any(|(_, n)| *n == other) {
                    return Err(parse_err(format!("duplicate column `{other}`")));
                }
                feature_cols.push((c, other));
            }
        }
    }
    let id_col = id_col.ok_or_else(|| parse_err("missing `id` column".into()))?;
    let label_col = label_col.ok_or_else(|| parse_err("missing `label` column".into()))?;
    let names: Vec<&str> = feature_cols.iter().map(|(_, n)| *n).collect();
    let schema = master.subset(&names)?;
    // Column index in the file for each feature of the visit schema.
    let order: Vec<usize> = schema
        .names()
        .map(|n| feature_cols.iter().find(|(_, m)| *m == n).unwrap().0)
        .collect();

    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(DataError::RowWidth {
                expected: headers.len(),
                found: record.len(),
            });
        }
        let field = |c: usize| record.get(c).unwrap_or("");
        let num = |c: usize| -> Result<f64, DataError> {
            field(c).trim().parse::<f64>().map_err(|_| {
                parse_err(format!(
                    "row {}: `{}` is not a number in column `{}`",
                    line + 2,
                    field(c),
                    &headers[c]
                ))
            })
        };
        let label = match field(label_col).trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(format!("row {}: label `{other}` is not 0 or 1", line + 2)))
            }
        };
        let values = order.iter().map(|&c| num(c)).collect::<Result<Vec<_>, _>>()?;
        rows.push((
            Instance {
                id: field(id_col).to_string(),
                visit: v,
                values,
            },
            label,
        ));
    }
    VisitData::new(v, schema, rows)
}

/// Write the cohort's visit files and `schema.json` into `dir`.
pub fn save_cohort(
    cohort: &LongitudinalCohort,
    dir: &Path,
    scaling: Option<&MinMaxScaler>,
) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    for vd in cohort.visits() {
        let path = visit_file(dir, vd.v());
        let mut w = csv::Writer::from_path(&path).map_err(|e| DataError::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let mut header = vec!["id".to_string()];
        header.extend(vd.schema().names().map(str::to_string));
        header.push("label".into());
        let csv_err = |e: csv::Error| DataError::Parse {
            path: path.clone(),
            message: e.to_string(),
        };
        w.write_record(&header).map_err(csv_err)?;
        for (inst, &y) in vd.instances().iter().zip(vd.labels()) {
            let mut rec = vec![inst.id.clone()];
            rec.extend(inst.values.iter().map(|x| x.to_string()));
            rec.push(if y { "1" } else { "0" }.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| DataError::io(&path, e))?;
    }
    SchemaDocument {
        features: cohort.schema().clone(),
        scaling: scaling.cloned(),
    }
    .save(&dir.join("schema.json"))
}
