//! Min-max scaling of continuous features to the unit interval.
//!
//! Statistics come from visit-1 rows of the training partition and are
//! applied unchanged to every visit, so later visits may fall outside
//! `[0, 1]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DataError, FeatureSchema, LongitudinalCohort, ValueKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    fn span(&self) -> f64 {
        let s = self.max - self.min;
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / self.span()
    }

    pub fn invert(&self, x: f64) -> f64 {
        x * self.span() + self.min
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MinMaxScaler {
    pub stats: BTreeMap<String, MinMax>,
}

impl MinMaxScaler {
    /// Fit on the visit-1 rows whose ids pass `include`.
    pub fn fit<F>(cohort: &LongitudinalCohort, include: F) -> Result<Self, DataError>
    where
        F: Fn(&str) -> bool,
    {
        let Some(first) = cohort.visit(1) else {
            return Ok(Self::default());
        };
        let mut stats = BTreeMap::new();
        for (j, spec) in first.schema().features().iter().enumerate() {
            if spec.kind != ValueKind::Continuous {
                continue;
            }
            let mut mm: Option<MinMax> = None;
            for inst in first.instances().iter().filter(|i| include(&i.id)) {
                let x = inst.values[j];
                mm = Some(match mm {
                    None => MinMax { min: x, max: x },
                    Some(m) => MinMax {
                        min: m.min.min(x),
                        max: m.max.max(x),
                    },
                });
            }
            if let Some(m) = mm {
                stats.insert(spec.name.clone(), m);
            }
        }
        Ok(Self { stats })
    }

    /// Scale one vector aligned to `schema`; unknown continuous features pass through.
    pub fn transform_row(&self, schema: &FeatureSchema, values: &mut [f64]) {
        for (spec, v) in schema.features().iter().zip(values.iter_mut()) {
            if let Some(m) = self.stats.get(&spec.name) {
                *v = m.apply(*v);
            }
        }
    }

    pub fn transform(&self, cohort: &LongitudinalCohort) -> Result<LongitudinalCohort, DataError> {
        cohort.map_values(|schema, values| self.transform_row(schema, values))
    }
}
