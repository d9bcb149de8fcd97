//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use longic::classifier::{CalibratedClassifier, SvmDualModel};
use longic::data::{Direction, FeatureSchema, FeatureSpec, ValueKind};
use longic::indirect::IndirectModel;
use longic::inverse::FeasibleRegion;
use longic::kernel::GaussianKernel;
use longic::matrix::Matrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|j| {
            y[j] = x[j] + h;
            let up = f(&y);
            y[j] = x[j] - h;
            let down = f(&y);
            y[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.random::<f64>()).collect())
        .collect();
    Matrix::from_rows(cols, &data).unwrap()
}

/// Calibrated classifier with random support vectors and coefficients.
pub fn random_classifier<R: Rng>(rng: &mut R, dim: usize, n_sv: usize) -> CalibratedClassifier {
    let sigma = rng.random_range(0.3..2.0);
    CalibratedClassifier {
        svm: SvmDualModel {
            support_vectors: random_matrix(rng, n_sv, dim),
            dual_coef: (0..n_sv).map(|_| rng.random_range(-2.0..2.0)).collect(),
            support_indices: (0..n_sv).collect(),
            bias: rng.random_range(-0.5..0.5),
            kernel: GaussianKernel::new(sigma).unwrap(),
            c: 2.0,
            iterations: 0,
        },
        platt_a: rng.random_range(-3.0..-0.5),
        platt_b: rng.random_range(-1.0..1.0),
        schema_hash: None,
    }
}

/// Decision value summed term by term from the kernel definition.
pub fn naive_decision(clf: &CalibratedClassifier, x: &[f64]) -> f64 {
    let s2 = clf.svm.kernel.sigma().powi(2);
    let mut s = clf.svm.bias;
    for (i, &a) in clf.svm.dual_coef.iter().enumerate() {
        let sv = clf.svm.support_vectors.row(i);
        let d2: f64 = sv.iter().zip(x).map(|(u, v)| (u - v) * (u - v)).sum();
        s += a * (-d2 / (2.0 * s2)).exp();
    }
    s
}

pub fn naive_proba(clf: &CalibratedClassifier, x: &[f64]) -> f64 {
    1.0 / (1.0 + (clf.platt_a * naive_decision(clf, x) + clf.platt_b).exp())
}

/// Estimator over `[x_D, x_U]` inputs with random targets.
pub fn random_phi<R: Rng>(rng: &mut R, n: usize, nd: usize, nu: usize, ni: usize) -> IndirectModel {
    let inputs = random_matrix(rng, n, nd + nu);
    let targets = random_matrix(rng, n, ni);
    IndirectModel::new(inputs, targets, nd, rng.random_range(0.2..1.0)).unwrap()
}

/// Nadaraya-Watson estimate computed directly from its definition.
pub fn naive_phi(phi: &IndirectModel, x_u: &[f64], x_d: &[f64]) -> Vec<f64> {
    let q: Vec<f64> = x_d.iter().chain(x_u).copied().collect();
    let s2 = phi.kernel().sigma().powi(2);
    let inputs = phi.train_inputs();
    let targets = phi.train_targets();
    let mut num = vec![0.0; targets.cols()];
    let mut den = 0.0;
    for i in 0..inputs.rows() {
        let d2: f64 = inputs.row(i).iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
        let w = (-d2 / (2.0 * s2)).exp();
        den += w;
        for (k, t) in targets.row(i).iter().enumerate() {
            num[k] += w * t;
        }
    }
    num.iter().map(|n| n / den).collect()
}

/// Schema with `nu` immutable, `nd` direct (unit cost, free) and `ni`
/// indirect features, in that order.
pub fn block_schema(nu: usize, nd: usize, ni: usize) -> FeatureSchema {
    let mut f = Vec::new();
    for k in 0..nu {
        f.push(FeatureSpec::immutable(&format!("u{k}"), ValueKind::Continuous, 0.0, 1.0));
    }
    for k in 0..nd {
        f.push(FeatureSpec::direct(
            &format!("d{k}"),
            ValueKind::Continuous,
            1.0,
            Direction::Free,
            0.0,
            1.0,
        ));
    }
    for k in 0..ni {
        f.push(FeatureSpec::indirect(&format!("i{k}"), 0.0, 1.0));
    }
    FeatureSchema::new(f).unwrap()
}

/// Maximum of the SVM dual `sum a - 1/2 a'Qa` over `0 <= a <= C`,
/// `y'a = 0`, by accelerated projected gradient ascent. The projection onto
/// the box-and-hyperplane set bisects on the hyperplane multiplier.
pub fn qp_dual_optimum(k: &[Vec<f64>], y: &[f64], c: f64, iters: usize) -> f64 {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i][j];
    let dual = |a: &[f64]| {
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += a[i] * a[j] * q(i, j);
            }
        }
        a.iter().sum::<f64>() - 0.5 * quad
    };
    let project = |z: &[f64]| -> Vec<f64> {
        let at = |mu: f64| -> (Vec<f64>, f64) {
            let a: Vec<f64> = (0..n).map(|i| (z[i] - mu * y[i]).clamp(0.0, c)).collect();
            let s = a.iter().zip(y).map(|(a, y)| a * y).sum();
            (a, s)
        };
        let (mut lo, mut hi) = (-1e3, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            // y'a(mu) is non-increasing in mu.
            if at(mid).1 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi)).0
    };
    // Lipschitz bound: largest row sum of |Q|.
    let l = (0..n)
        .map(|i| (0..n).map(|j| q(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / l;
    let mut a = vec![0.0; n];
    let mut v = a.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad: Vec<f64> = (0..n)
            .map(|i| 1.0 - (0..n).map(|j| q(i, j) * v[j]).sum::<f64>())
            .collect();
        let z: Vec<f64> = (0..n).map(|i| v[i] + step * grad[i]).collect();
        let next = project(&z);
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        v = (0..n).map(|i| next[i] + (t - 1.0) / tn * (next[i] - a[i])).collect();
        a = next;
        t = tn;
    }
    dual(&a)
}

/// Noisy two-moons sample with balanced classes.
pub fn two_moons<R: Rng>(rng: &mut R, n: usize, noise: f64) -> (Matrix, Vec<bool>) {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let t = std::f64::consts::PI * rng.random::<f64>();
        let upper = i % 2 == 0;
        let (x0, x1) = if upper {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        rows.push(vec![x0 + noise * normal(rng), x1 + noise * normal(rng)]);
        y.push(upper);
    }
    (Matrix::from_rows(2, &rows).unwrap(), y)
}

/// Brute-force nearest feasible point on a lattice of step 0.001 anchored
/// at 0. Searches a 0.05 grid over the box, then repeatedly re-centres
/// windows of steps 0.01 and 0.001 on the incumbent until it stops moving.
/// Exact when the origin, bounds and budget face are lattice-aligned.
pub fn lattice_projection(r: &FeasibleRegion, z: &[f64]) -> Vec<f64> {
    let d = r.dim();
    let dist = |p: &[f64]| p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let feasible = |p: &[f64]| r.cost(p) <= r.budget + 1e-12;
    // Integer lattice coordinates in units of 0.001.
    let lo: Vec<i64> = r.lower.iter().map(|v| (v * 1000.0).round() as i64).collect();
    let hi: Vec<i64> = r.upper.iter().map(|v| (v * 1000.0).round() as i64).collect();
    let to_point = |c: &[i64]| -> Vec<f64> { c.iter().map(|&k| k as f64 / 1000.0).collect() };

    let search = |centre: &[i64], radius: i64, step: i64| -> Option<(f64, Vec<i64>)> {
        let axes: Vec<Vec<i64>> = (0..d)
            .map(|j| {
                let a = (centre[j] - radius).max(lo[j]);
                let b = (centre[j] + radius).min(hi[j]);
                let mut v: Vec<i64> = (0..)
                    .map(|k| a + k * step)
                    .take_while(|&x| x <= b)
                    .collect();
                // Bounds and the origin are always candidates.
                for extra in [a, b, (r.origin[j] * 1000.0).round() as i64] {
                    if extra >= a && extra <= b && !v.contains(&extra) {
                        v.push(extra);
                    }
                }
                v
            })
            .collect();
        let mut best: Option<(f64, Vec<i64>)> = None;
        let mut idx = vec![0usize; d];
        loop {
            let c: Vec<i64> = (0..d).map(|j| axes[j][idx[j]]).collect();
            let p = to_point(&c);
            if feasible(&p) {
                let f = dist(&p);
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, c));
                }
            }
            let mut j = 0;
            loop {
                if j == d {
                    return best;
                }
                idx[j] += 1;
                if idx[j] < axes[j].len() {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    };

    let origin: Vec<i64> = r.origin.iter().map(|v| (v * 1000.0).round() as i64).collect();
    let span = lo.iter().zip(&hi).map(|(a, b)| b - a).max().unwrap_or(0);
    let (mut f, mut c) = search(&origin, span, 50).expect("the origin is feasible");
    for (radius, step) in [(100, 10), (10, 1)] {
        loop {
            let (nf, nc) = search(&c, radius, step).expect("incumbent is feasible");
            if nf < f {
                f = nf;
                c = nc;
            } else {
                break;
            }
        }
    }
    to_point(&c)
}

pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Worst absolute errors of the analytic gradients against central
/// differences.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientReport {
    pub cases: usize,
    pub proba: f64,
    pub jacobian: f64,
    pub objective: f64,
    /// Worst gap between `predict_proba` and the term-by-term oracle.
    pub value: f64,
}

pub fn gradient_suite(cases: usize, seed: u64) -> GradientReport {
    use longic::inverse::{objective, objective_grad};
    let mut rng = rng(seed);
    let h = 1e-5;
    let mut rep = GradientReport {
        cases,
        ..Default::default()
    };
    for _ in 0..cases {
        let p = rng.random_range(2..=20usize);
        let nd = rng.random_range(1..=p.min(8));
        let ni = rng.random_range(0..=(p - nd).min(6));
        let nu = p - nd - ni;
        let n_sv = rng.random_range(3..30);
        let clf = random_classifier(&mut rng, p, n_sv);
        let x: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();

        let g = clf.grad_proba(&x).unwrap();
        let fd = central_diff(|y| clf.predict_proba(y).unwrap(), &x, h);
        rep.proba = rep.proba.max(max_abs_diff(&g, &fd));
        rep.value = rep.value.max((clf.predict_proba(&x).unwrap() - naive_proba(&clf, &x)).abs());

        let schema = block_schema(nu, nd, ni);
        let n_phi = rng.random_range(2..40);
        let phi = (ni > 0).then(|| random_phi(&mut rng, n_phi, nd, nu, ni));
        let x_u = &x[..nu];
        let x_d: Vec<f64> = x[nu..nu + nd].to_vec();
        if let Some(phi) = &phi {
            let jac = phi.jacobian_wrt_direct(x_u, &x_d).unwrap();
            for k in 0..ni {
                let fd = central_diff(|d| phi.estimate(x_u, d).unwrap()[k], &x_d, h);
                rep.jacobian = rep.jacobian.max(max_abs_diff(jac.row(k), &fd));
            }
        }
        let og = objective_grad(&clf, phi.as_ref(), &schema, &x, &x_d).unwrap();
        let fd = central_diff(
            |d| objective(&clf, phi.as_ref(), &schema, &x, d).unwrap(),
            &x_d,
            h,
        );
        rep.objective = rep.objective.max(max_abs_diff(&og, &fd));
    }
    rep
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ProjectionReport {
    pub cases: usize,
    /// Worst per-coordinate gap to the lattice oracle.
    pub lattice: f64,
    /// Worst change from projecting a projected point again.
    pub idempotence: f64,
    pub infeasible: usize,
}

/// Random lattice-aligned regions with `|D| <= 4`: origins and budgets on
/// a 0.01 grid and costs in {0.5, 1, 2}, so that the budget face carries
/// lattice points.
pub fn projection_suite(cases: usize, seed: u64) -> ProjectionReport {
    let mut rng = rng(seed);
    let mut rep = ProjectionReport {
        cases,
        ..Default::default()
    };
    let dirs = [Direction::Increase, Direction::Decrease, Direction::Free];
    let costs = [0.5, 1.0, 2.0];
    for _ in 0..cases {
        let d = rng.random_range(1..=4usize);
        let origin: Vec<f64> = (0..d).map(|_| rng.random_range(0..=100) as f64 / 100.0).collect();
        let c: Vec<f64> = (0..d).map(|_| costs[rng.random_range(0..3)]).collect();
        let dv: Vec<Direction> = (0..d).map(|_| dirs[rng.random_range(0..3)]).collect();
        let budget = rng.random_range(0..=150) as f64 / 100.0;
        let r = FeasibleRegion::new(origin.clone(), c, dv, budget).unwrap();
        let z: Vec<f64> = origin.iter().map(|o| o + 0.5 * normal(&mut rng)).collect();
        let x = r.project(&z, 1e-8).unwrap();
        if !r.contains(&x, 1e-8) {
            rep.infeasible += 1;
        }
        let oracle = lattice_projection(&r, &z);
        rep.lattice = rep.lattice.max(max_abs_diff(&x, &oracle));
        let again = r.project(&x, 1e-8).unwrap();
        rep.idempotence = rep.idempotence.max(max_abs_diff(&x, &again));
    }
    rep
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SvmReport {
    pub problems: usize,
    pub max_relative_gap: f64,
    pub max_kkt: f64,
}

fn gram(x: &Matrix, sigma: f64) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|i| {
            (0..x.rows())
                .map(|j| {
                    let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-d2 / (2.0 * sigma * sigma)).exp()
                })
                .collect()
        })
        .collect()
}

/// 30-point problems solved by SMO and by the reference QP solver.
pub fn svm_suite(problems: usize, seed: u64) -> SvmReport {
    use longic::classifier::{train_svm, SvmParams};
    let mut rng = rng(seed);
    let mut rep = SvmReport {
        problems,
        ..Default::default()
    };
    for k in 0..problems {
        let x = random_matrix(&mut rng, 30, 2);
        let y: Vec<bool> = (0..30)
            .map(|i| {
                let r = x.row(i);
                (r[0] - r[1] + 0.3 * normal(&mut rng)) > 0.0 || i == 0
            })
            .collect();
        let c = [0.5, 1.0, 10.0][k % 3];
        let sigma = [0.3, 1.0][k % 2];
        let m = train_svm(&x, &y, &SvmParams::new(c, sigma)).unwrap();
        let ys: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        let reference = qp_dual_optimum(&gram(&x, sigma), &ys, c, 20_000);
        let gap = (m.dual_objective() - reference).abs() / reference.abs().max(1e-12);
        rep.max_relative_gap = rep.max_relative_gap.max(gap);
        rep.max_kkt = rep.max_kkt.max(m.kkt_violation(&x, &y));
    }
    rep
}
