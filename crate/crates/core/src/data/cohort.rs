//! Instances, visits and the longitudinal cohort with its subset/exclusion
//! invariants.

use std::collections::BTreeSet;

use super::{DataError, FeatureSchema, ValueKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub visit: u32,
    /// Aligned to the schema of the visit this instance belongs to.
    pub values: Vec<f64>,
}

/// One visit: the features observed there, the instances, and their labels
/// (the outcome observed at the following visit).
#[derive(Debug, Clone, PartialEq)]
pub struct VisitData {
    v: u32,
    schema: FeatureSchema,
    instances: Vec<Instance>,
    labels: Vec<bool>,
}

impl VisitData {
    /// Rows are sorted by id so that everything downstream is independent
    /// of the order rows were supplied in.
    pub fn new(
        v: u32,
        schema: FeatureSchema,
        rows: Vec<(Instance, bool)>,
    ) -> Result<Self, DataError> {
        if v == 0 {
            return Err(DataError::Invariant("visits are numbered from 1".into()));
        }
        let mut rows = rows;
        rows.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        for w in rows.windows(2) {
            if w[0].0.id == w[1].0.id {
                return Err(DataError::Invariant(format!(
                    "id `{}` appears twice at visit {v}",
                    w[0].0.id
                )));
            }
        }
        for (inst, _) in &rows {
            if inst.visit != v {
                return Err(DataError::Invariant(format!(
                    "instance `{}` tagged with visit {} inside visit {v}",
                    inst.id, inst.visit
                )));
            }
            if inst.values.len() != schema.len() {
                return Err(DataError::RowWidth {
                    expected: schema.len(),
                    found: inst.values.len(),
                });
            }
            for (spec, &x) in schema.features().iter().zip(&inst.values) {
                if !x.is_finite() {
                    return Err(DataError::Invariant(format!(
                        "non-finite `{}` for id `{}` at visit {v}",
                        spec.name, inst.id
                    )));
                }
                if spec.kind == ValueKind::Binary && x != 0.0 && x != 1.0 {
                    return Err(DataError::Invariant(format!(
                        "binary feature `{}` has value {x} for id `{}` at visit {v}",
                        spec.name, inst.id
                    )));
                }
            }
        }
        let (instances, labels) = rows.into_iter().unzip();
        Ok(Self {
            v,
            schema,
            instances,
            labels,
        })
    }

    pub fn v(&self) -> u32 {
        self.v
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.instances.binary_search_by(|i| i.id.as_str().cmp(id)).ok()
    }

    pub fn get(&self, id: &str) -> Option<(&Instance, bool)> {
        self.position(id).map(|i| (&self.instances[i], self.labels[i]))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.instances.iter().map(|i| i.id.as_str())
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }
}

/// Visits `1..=V` over a master schema (the full visit-1 feature set).
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalCohort {
    schema: FeatureSchema,
    visits: Vec<VisitData>,
}

impl LongitudinalCohort {
    pub fn new(schema: FeatureSchema, visits: Vec<VisitData>) -> Result<Self, DataError> {
        for (k, vd) in visits.iter().enumerate() {
            let expected = k as u32 + 1;
            if vd.v != expected {
                return Err(DataError::Invariant(format!(
                    "visits must be numbered consecutively from 1; found {} at position {expected}",
                    vd.v
                )));
            }
            if !vd.schema.is_subset_of(&schema) {
                return Err(DataError::Invariant(format!(
                    "visit {} has features outside the master schema",
                    vd.v
                )));
            }
            if vd.v == 1 && vd.schema.len() != schema.len() {
                return Err(DataError::Invariant(
                    "visit 1 must observe every feature of the master schema".into(),
                ));
            }
        }
        for pair in visits.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            for id in next.ids() {
                match prev.get(id) {
                    None => {
                        return Err(DataError::Invariant(format!(
                            "id `{id}` present at visit {} but not at visit {}",
                            next.v, prev.v
                        )))
                    }
                    Some((_, true)) => {
                        return Err(DataError::Invariant(format!(
                            "id `{id}` had the event by visit {} but reappears at visit {}",
                            prev.v, next.v
                        )))
                    }
                    Some((_, false)) => {}
                }
            }
        }
        Ok(Self { schema, visits })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn visits(&self) -> &[VisitData] {
        &self.visits
    }

    pub fn n_visits(&self) -> u32 {
        self.visits.len() as u32
    }

    pub fn visit(&self, v: u32) -> Option<&VisitData> {
        if v == 0 {
            return None;
        }
        self.visits.get(v as usize - 1)
    }

    /// Features of the master schema absent at visit `v`, in master order.
    pub fn missing_at(&self, v: u32) -> Vec<String> {
        let Some(vd) = self.visit(v) else {
            return Vec::new();
        };
        self.schema
            .names()
            .filter(|n| !vd.schema.contains(n))
            .map(str::to_string)
            .collect()
    }

    /// Every id that appears anywhere (equivalently, at visit 1).
    pub fn all_ids(&self) -> BTreeSet<String> {
        self.visits
            .iter()
            .flat_map(|v| v.ids().map(str::to_string))
            .collect()
    }

    /// The visit at which an id's event was observed, if any.
    pub fn event_visit(&self, id: &str) -> Option<u32> {
        self.visits
            .iter()
            .find(|vd| vd.get(id).is_some_and(|(_, y)| y))
            .map(|vd| vd.v)
    }

    /// Consecutive-visit pairs for every id present at both visits, ordered
    /// by visit then id.
    pub fn chain_visits(&self) -> Vec<(&Instance, &Instance)> {
        let mut out = Vec::new();
        for pair in self.visits.windows(2) {
            for next in pair[1].instances() {
                if let Some((prev, _)) = pair[0].get(&next.id) {
                    out.push((prev, next));
                }
            }
        }
        out
    }

    pub fn total_instances(&self) -> usize {
        self.visits.iter().map(VisitData::len).sum()
    }

    /// Rebuild with every value vector passed through `f`.
    pub fn map_values<F>(&self, f: F) -> Result<Self, DataError>
    where
        F: Fn(&FeatureSchema, &mut [f64]),
    {
        let mut visits = Vec::with_capacity(self.visits.len());
        for vd in &self.visits {
            let mut instances = vd.instances.clone();
            for inst in &mut instances {
                f(&vd.schema, &mut inst.values);
            }
            // Scaled binaries stay 0/1, so the constructor checks still hold.
            visits.push(VisitData {
                v: vd.v,
                schema: vd.schema.clone(),
                instances,
                labels: vd.labels.clone(),
            });
        }
        Ok(Self {
            schema: self.schema.clone(),
            visits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSpec, ValueKind};

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureSpec::immutable("age", ValueKind::Continuous, 0.0, 100.0),
            FeatureSpec::immutable("smoker", ValueKind::Binary, 0.0, 1.0),
        ])
        .unwrap()
    }

    fn row(id: &str, v: u32, x: f64, y: bool) -> (Instance, bool) {
        (
            Instance {
                id: id.into(),
                visit: v,
                values: vec![x, 0.0],
            },
            y,
        )
    }

    #[test]
    fn chain_follows_ids_and_exclusion() {
        let s = schema();
        let v1 = VisitData::new(1, s.clone(), vec![row("a", 1, 50.0, false), row("b", 1, 60.0, false)]).unwrap();
        let v2 = VisitData::new(2, s.clone(), vec![row("a", 2, 52.0, false), row("b", 2, 62.0, true)]).unwrap();
        let v3 = VisitData::new(3, s.clone(), vec![row("a", 3, 54.0, false)]).unwrap();
        let c = LongitudinalCohort::new(s, vec![v1, v2, v3]).unwrap();
        let pairs: Vec<(String, u32)> = c
            .chain_visits()
            .iter()
            .map(|(p, _)| (p.id.clone(), p.visit))
            .collect();
        assert_eq!(
            pairs,
            vec![("a".into(), 1), ("b".into(), 1), ("a".into(), 2)]
        );
        assert_eq!(c.event_visit("b"), Some(2));
    }

    #[test]
    fn disjoint_ids_rejected() {
        let s = schema();
        let v1 = VisitData::new(1, s.clone(), vec![row("a", 1, 50.0, false)]).unwrap();
        let v2 = VisitData::new(2, s.clone(), vec![row("z", 2, 52.0, false)]).unwrap();
        assert!(matches!(
            LongitudinalCohort::new(s, vec![v1, v2]),
            Err(DataError::Invariant(_))
        ));
    }

    #[test]
    fn positive_reappearing_rejected() {
        let s = schema();
        let v1 = VisitData::new(1, s.clone(), vec![row("a", 1, 50.0, true)]).unwrap();
        let v2 = VisitData::new(2, s.clone(), vec![row("a", 2, 52.0, false)]).unwrap();
        assert!(LongitudinalCohort::new(s, vec![v1, v2]).is_err());
    }

    #[test]
    fn binary_half_rejected() {
        let s = schema();
        let bad = (
            Instance {
                id: "a".into(),
                visit: 1,
                values: vec![50.0, 0.5],
            },
            false,
        );
        assert!(VisitData::new(1, s, vec![bad]).is_err());
    }

    #[test]
    fn empty_visits_are_valid() {
        let s = schema();
        let v1 = VisitData::new(1, s.clone(), vec![]).unwrap();
        let v2 = VisitData::new(2, s.clone(), vec![]).unwrap();
        let c = LongitudinalCohort::new(s, vec![v1, v2]).unwrap();
        assert_eq!(c.total_instances(), 0);
        assert!(c.chain_visits().is_empty());
    }

    #[test]
    fn row_order_does_not_matter() {
        let s = schema();
        let a = VisitData::new(1, s.clone(), vec![row("b", 1, 1.0, false), row("a", 1, 2.0, false)]).unwrap();
        let b = VisitData::new(1, s, vec![row("a", 1, 2.0, false), row("b", 1, 1.0, false)]).unwrap();
        assert_eq!(a, b);
    }
}
