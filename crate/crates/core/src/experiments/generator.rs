//! Synthetic longitudinal cohort with a known ground truth.
//!
//! Values are produced in natural units. Immutable features evolve
//! deterministically or by random walk, lifestyle features drift
//! autoregressively, the lab values are a fixed noisy nonlinear function of
//! the rest, and the event at each visit is drawn from a logistic hazard that
//! also depends on an exposure term accumulated over earlier visits. The
//! per-visit intercept is solved so that the expected event rate among
//! patients still at risk hits the configured target.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    DataError, Direction, FeatureSchema, FeatureSpec, Instance, LongitudinalCohort, ValueKind, VisitData,
};
use crate::seeding::stream;

/// Extra generic features appended to each role, for scaling studies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtraDims {
    pub immutable: usize,
    pub direct: usize,
    pub indirect: usize,
}

/// Weights of the hazard's linear predictor on natural-unit features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HazardCoefficients {
    pub age: f64,
    pub sex: f64,
    pub family_history: f64,
    pub deprivation_index: f64,
    pub exercise: f64,
    pub diet_quality: f64,
    pub sodium: f64,
    pub alcohol: f64,
    pub smoking: f64,
    pub statin_use: f64,
    pub systolic_bp: f64,
    pub ldl: f64,
    pub glucose: f64,
    /// Weight of the accumulated exposure from earlier visits.
    pub exposure: f64,
    /// Carry-over of exposure from one visit to the next.
    pub exposure_decay: f64,
    /// Scale of each patient's latent pre-study exposure.
    pub frailty: f64,
}

impl Default for HazardCoefficients {
    fn default() -> Self {
        Self {
            age: 0.06,
            sex: 0.4,
            family_history: 0.6,
            deprivation_index: 0.3,
            exercise: -0.5,
            diet_quality: -0.3,
            sodium: 0.7,
            alcohol: 0.12,
            smoking: 1.4,
            statin_use: -0.8,
            systolic_bp: 0.03,
            ldl: 0.012,
            glucose: 0.02,
            exposure: 0.6,
            exposure_decay: 0.7,
            frailty: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseScales {
    pub hematocrit: f64,
    pub deprivation_step: f64,
    pub lifestyle: f64,
    pub lab: f64,
    /// Autoregressive coefficient of the lifestyle features.
    pub drift: f64,
}

impl Default for NoiseScales {
    fn default() -> Self {
        Self {
            hematocrit: 1.0,
            deprivation_step: 0.25,
            lifestyle: 0.6,
            lab: 1.0,
            drift: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_patients: usize,
    pub visits: u32,
    pub dims: ExtraDims,
    pub coefficients: HazardCoefficients,
    pub noise: NoiseScales,
    /// Features dropped at each visit, starting with visit 1 (which must
    /// drop nothing).
    pub missingness: Vec<Vec<String>>,
    /// Target fraction of at-risk patients with an event at each visit.
    pub event_rate: f64,
    /// Probability that an event-free patient leaves before the next visit.
    pub dropout: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Self {
            n_patients: 4000,
            visits: 3,
            dims: ExtraDims::default(),
            coefficients: HazardCoefficients::default(),
            noise: NoiseScales::default(),
            missingness: vec![
                Vec::new(),
                s(&["diet_quality", "glucose"]),
                s(&["diet_quality", "glucose", "sodium", "smoking"]),
            ],
            event_rate: 0.02,
            dropout: 0.03,
        }
    }
}

/// Features used by the missing-feature comparison: a linearly generated
/// continuous feature, a lifestyle feature, a logistic-generated binary
/// feature and a pure random walk.
pub const IMPUTATION_TARGETS: [&str; 4] = ["hematocrit", "alcohol", "statin_use", "deprivation_index"];

/// The linearly generated continuous target.
pub const LINEAR_TARGET: &str = "hematocrit";
/// The logistic-generated binary target.
pub const LOGISTIC_TARGET: &str = "statin_use";
/// The random-walk target.
pub const RANDOM_WALK_TARGET: &str = "deprivation_index";

/// Schema of the generated cohort, with unit costs on every direct feature.
pub fn generator_schema(dims: &ExtraDims) -> Result<FeatureSchema, DataError> {
    use ValueKind::{Binary, Continuous};
    let mut f = vec![
        FeatureSpec::immutable("age", Continuous, 0.0, 1.0),
        FeatureSpec::immutable("sex", Binary, 0.0, 1.0),
        FeatureSpec::immutable("family_history", Binary, 0.0, 1.0),
        FeatureSpec::immutable("hematocrit", Continuous, 0.0, 1.0),
        FeatureSpec::immutable("deprivation_index", Continuous, 0.0, 1.0),
    ];
    for k in 0..dims.immutable {
        f.push(FeatureSpec::immutable(&format!("extra_u{}", k + 1), Continuous, 0.0, 1.0));
    }
    f.extend([
        FeatureSpec::direct("exercise", Continuous, 1.0, Direction::Increase, 0.0, 1.0),
        FeatureSpec::direct("diet_quality", Continuous, 1.0, Direction::Increase, 0.0, 1.0),
        FeatureSpec::direct("sodium", Continuous, 1.0, Direction::Decrease, 0.0, 1.0),
        FeatureSpec::direct("alcohol", Continuous, 1.0, Direction::Decrease, 0.0, 1.0),
        FeatureSpec::direct("smoking", Binary, 1.0, Direction::Decrease, 0.0, 1.0),
        FeatureSpec::direct("statin_use", Binary, 1.0, Direction::Increase, 0.0, 1.0),
    ]);
    for k in 0..dims.direct {
        f.push(FeatureSpec::direct(
            &format!("extra_d{}", k + 1),
            Continuous,
            1.0,
            Direction::Decrease,
            0.0,
            1.0,
        ));
    }
    f.extend([
        FeatureSpec::indirect("systolic_bp", 0.0, 1.0),
        FeatureSpec::indirect("ldl", 0.0, 1.0),
        FeatureSpec::indirect("glucose", 0.0, 1.0),
    ]);
    for k in 0..dims.indirect {
        f.push(FeatureSpec::indirect(&format!("extra_i{}", k + 1), 0.0, 1.0));
    }
    FeatureSchema::new(f)
}

impl GeneratorSpec {
    pub fn validate(&self, schema: &FeatureSchema) -> Result<(), DataError> {
        if !(self.event_rate > 0.0 && self.event_rate < 0.5) {
            return Err(DataError::Invariant(format!("event rate {} outside (0, 0.5)", self.event_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(DataError::Invariant(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.visits == 0 {
            return Err(DataError::Invariant("at least one visit is required".into()));
        }
        if self.missingness.first().is_some_and(|m| !m.is_empty()) {
            return Err(DataError::Invariant("visit 1 must observe every feature".into()));
        }
        for drop in &self.missingness {
            for name in drop {
                if !schema.contains(name) {
                    return Err(DataError::UnknownFeature(name.clone()));
                }
            }
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Natural-unit state of one patient at one visit.
#[derive(Debug, Clone)]
struct State {
    age: f64,
    sex: f64,
    family_history: f64,
    hematocrit: f64,
    deprivation: f64,
    extra_u: Vec<f64>,
    exercise: f64,
    diet: f64,
    sodium: f64,
    alcohol: f64,
    smoking: f64,
    statin: f64,
    extra_d: Vec<f64>,
    sbp: f64,
    ldl: f64,
    glucose: f64,
    extra_i: Vec<f64>,
}

impl State {
    fn values(&self) -> Vec<f64> {
        let mut v = vec![self.age, self.sex, self.family_history, self.hematocrit, self.deprivation];
        v.extend(&self.extra_u);
        v.extend([self.exercise, self.diet, self.sodium, self.alcohol, self.smoking, self.statin]);
        v.extend(&self.extra_d);
        v.extend([self.sbp, self.ldl, self.glucose]);
        v.extend(&self.extra_i);
        v
    }

    /// Linear predictor of the hazard without intercept or exposure.
    fn score(&self, c: &HazardCoefficients) -> f64 {
        c.age * (self.age - 55.0)
            + c.sex * self.sex
            + c.family_history * self.family_history
            + c.deprivation_index * self.deprivation
            + c.exercise * (self.exercise - 3.0)
            + c.diet_quality * (self.diet - 5.0)
            + c.sodium * (self.sodium - 3.5)
            + c.alcohol * (self.alcohol - 5.0)
            + c.smoking * self.smoking
            + c.statin_use * self.statin
            + c.systolic_bp * (self.sbp - 130.0)
            + c.ldl * (self.ldl - 130.0)
            + c.glucose * (self.glucose - 100.0)
            + 0.2 * self.extra_d.iter().sum::<f64>()
            + 0.1 * self.extra_i.iter().sum::<f64>()
    }
}

struct Sampler<'a> {
    spec: &'a GeneratorSpec,
    rng: ChaCha8Rng,
    std: Normal<f64>,
}

impl Sampler<'_> {
    fn n(&mut self) -> f64 {
        self.std.sample(&mut self.rng)
    }

    fn bern(&mut self, p: f64) -> f64 {
        (self.rng.random::<f64>() < p) as u8 as f64
    }

    fn hematocrit(&mut self, age: f64, sex: f64, dep: f64, smoking: f64) -> f64 {
        42.0 + 3.0 * sex - 0.05 * (age - 55.0) - 0.8 * dep + 1.5 * smoking + self.spec.noise.hematocrit * self.n()
    }

    fn statin(&mut self, age: f64, sex: f64, fh: f64) -> f64 {
        let p = sigmoid(-1.5 + 0.2 * (age - 55.0) + 2.5 * fh + 1.0 * sex);
        self.bern(p)
    }

    fn labs(&mut self, s: &mut State) {
        let e = self.spec.noise.lab;
        s.sbp = 120.0 + 0.6 * (s.age - 55.0) + 6.0 * s.smoking + 8.0 * (0.8 * (s.sodium - 3.5)).tanh()
            - 4.0 * (0.5 * (s.exercise - 3.0)).tanh()
            + 0.15 * s.alcohol * s.alcohol / 5.0
            + 3.0 * e * self.n();
        s.ldl = 130.0 - 25.0 * s.statin - 3.0 * (s.diet - 5.0) + 0.4 * (s.age - 55.0) + 10.0 * s.family_history
            - 2.0 * (s.exercise - 3.0).max(0.0).sqrt()
            + 5.0 * e * self.n();
        s.glucose = 95.0 + 0.3 * (s.age - 55.0) + 0.6 * (s.exercise - 3.0).powi(2) / 2.0 - 2.0 * (s.exercise - 3.0)
            + 3.0 * s.deprivation
            + 2.0 * e * self.n();
        s.extra_i = (0..s.extra_i.len())
            .map(|k| {
                let d = s.extra_d.get(k).copied().unwrap_or(0.0);
                (d + 0.1 * s.age / 10.0).sin() + 0.1 * e * self.n()
            })
            .collect();
    }

    fn initial(&mut self) -> State {
        let age = self.rng.random_range(45.0..65.0);
        let sex = self.bern(0.5);
        let fh = self.bern(0.3);
        let dep = self.n();
        let smoking = self.bern(0.25);
        let l = self.spec.noise.lifestyle;
        let mut s = State {
            age,
            sex,
            family_history: fh,
            hematocrit: 0.0,
            deprivation: dep,
            extra_u: (0..self.spec.dims.immutable).map(|_| self.n()).collect(),
            exercise: (3.0 + 1.5 * l * self.n() - 0.3 * dep).max(0.0),
            diet: (5.0 + 2.0 * l * self.n()).clamp(0.0, 10.0),
            sodium: (3.5 + 0.8 * l * self.n()).max(0.5),
            alcohol: (5.0 + 4.0 * l * self.n()).max(0.0),
            smoking,
            statin: 0.0,
            extra_d: (0..self.spec.dims.direct).map(|_| self.n()).collect(),
            sbp: 0.0,
            ldl: 0.0,
            glucose: 0.0,
            extra_i: vec![0.0; self.spec.dims.indirect],
        };
        s.hematocrit = self.hematocrit(age, sex, dep, smoking);
        s.statin = self.statin(age, sex, fh);
        self.labs(&mut s);
        s
    }

    fn advance(&mut self, prev: &State) -> State {
        let rho = self.spec.noise.drift;
        let l = self.spec.noise.lifestyle;
        let mut s = prev.clone();
        s.age += 2.0;
        s.deprivation += self.spec.noise.deprivation_step * self.n();
        for u in &mut s.extra_u {
            *u += 0.1 * self.std.sample(&mut self.rng);
        }
        s.exercise = (3.0 + rho * (prev.exercise - 3.0) + 1.5 * l * self.n()).max(0.0);
        s.diet = (5.0 + rho * (prev.diet - 5.0) + 2.0 * l * self.n()).clamp(0.0, 10.0);
        s.sodium = (3.5 + rho * (prev.sodium - 3.5) + 0.8 * l * self.n()).max(0.5);
        s.alcohol = (5.0 + rho * (prev.alcohol - 5.0) + 4.0 * l * self.n()).max(0.0);
        s.smoking = if prev.smoking > 0.5 {
            1.0 - self.bern(0.15)
        } else {
            self.bern(0.03)
        };
        for d in &mut s.extra_d {
            *d = rho * *d + 0.5 * self.std.sample(&mut self.rng);
        }
        s.hematocrit = self.hematocrit(s.age, s.sex, s.deprivation, s.smoking);
        s.statin = self.statin(s.age, s.sex, s.family_history);
        self.labs(&mut s);
        s
    }
}

/// Intercept making the mean of `sigmoid(a + z_i)` equal to `rate`.
fn solve_intercept(z: &[f64], rate: f64) -> f64 {
    if z.is_empty() {
        return 0.0;
    }
    let mean = |a: f64| z.iter().map(|&zi| sigmoid(a + zi)).sum::<f64>() / z.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draw a cohort. Deterministic in `(spec, seed)`.
pub fn generate_cohort(spec: &GeneratorSpec, seed: u64) -> Result<LongitudinalCohort, DataError> {
    let schema = generator_schema(&spec.dims)?;
    spec.validate(&schema)?;
    let mut smp = Sampler {
        spec,
        rng: stream(seed, "generator"),
        std: Normal::new(0.0, 1.0).expect("unit normal"),
    };
    let width = format!("{}", spec.n_patients.max(1)).len();
    let c = &spec.coefficients;

    // (id, state, exposure)
    let mut alive: Vec<(String, State, f64)> = (0..spec.n_patients)
        .map(|i| {
            let s = smp.initial();
            let exposure = c.frailty * smp.n() + s.score(c);
            (format!("p{:0width$}", i + 1), s, exposure)
        })
        .collect();

    let mut visits = Vec::new();
    for v in 1..=spec.visits {
        let drop: &[String] = spec.missingness.get(v as usize - 1).map(Vec::as_slice).unwrap_or(&[]);
        let keep: Vec<String> = schema
            .names()
            .filter(|n| !drop.iter().any(|d| d == n))
            .map(str::to_string)
            .collect();
        let vschema = schema.subset(&keep)?;
        let cols: Vec<usize> = keep.iter().map(|n| schema.index_of(n).unwrap()).collect();

        let z: Vec<f64> = alive.iter().map(|(_, s, e)| s.score(c) + c.exposure * e).collect();
        let a = solve_intercept(&z, spec.event_rate);
        let mut rows = Vec::with_capacity(alive.len());
        let mut next = Vec::with_capacity(alive.len());
        for ((id, s, e), zi) in alive.into_iter().zip(z) {
            let event = smp.rng.random::<f64>() < sigmoid(a + zi);
            let all = s.values();
            rows.push((
                Instance {
                    id: id.clone(),
                    visit: v,
                    values: cols.iter().map(|&j| all[j]).collect(),
                },
                event,
            ));
            let leaves = smp.rng.random::<f64>() < spec.dropout;
            if !event && !leaves {
                let exposure = c.exposure_decay * e + s.score(c);
                let s2 = smp.advance(&s);
                next.push((id, s2, exposure));
            }
        }
        visits.push(VisitData::new(v, vschema, rows)?);
        alive = next;
    }
    LongitudinalCohort::new(schema, visits)
}
