//! Platt scaling: `P(y = 1 | s) = 1 / (1 + exp(A s + B))`.
//!
//! Fitted by Newton's method with backtracking on the negative
//! log-likelihood against smoothed targets `t+ = (N+ + 1) / (N+ + 2)` and
//! `t- = 1 / (N- + 2)`, following the numerically careful variant of Lin,
//! Lin and Weng.

use super::ClassifierError;
use crate::matrix::DimensionMismatch;

const MIN_STEP: f64 = 1e-10;
const HESSIAN_RIDGE: f64 = 1e-12;
const GRAD_EPS: f64 = 1e-5;

/// Sigmoid of Platt form, computed without overflow.
#[inline]
pub fn platt_probability(a: f64, b: f64, s: f64) -> f64 {
    let z = a * s + b;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

fn objective(s: &[f64], t: &[f64], a: f64, b: f64) -> f64 {
    s.iter()
        .zip(t)
        .map(|(&si, &ti)| {
            let z = si * a + b;
            if z >= 0.0 {
                ti * z + (-z).exp().ln_1p()
            } else {
                (ti - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

/// Returns `(A, B)`.
pub fn fit_platt(decisions: &[f64], y: &[bool], max_iter: usize) -> Result<(f64, f64), ClassifierError> {
    DimensionMismatch::check(decisions.len(), y.len())?;
    if decisions.iter().any(|d| !d.is_finite()) {
        return Err(ClassifierError::InvalidParameter("non-finite decision value".into()));
    }
    let n_pos = y.iter().filter(|&&b| b).count() as f64;
    let n_neg = y.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(ClassifierError::SingleClass);
    }
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let t: Vec<f64> = y.iter().map(|&b| if b { hi } else { lo }).collect();

    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let mut fval = objective(decisions, &t, a, b);

    for _ in 0..max_iter {
        let (mut h11, mut h22, mut h21) = (HESSIAN_RIDGE, HESSIAN_RIDGE, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&s, &ti) in decisions.iter().zip(&t) {
            let p = platt_probability(a, b, s);
            // Note P here is the probability of the positive class, so the
            // likelihood derivative with respect to z is (t - P).
            let d2 = p * (1.0 - p);
            h11 += s * s * d2;
            h22 += d2;
            h21 += s * d2;
            let d1 = ti - p;
            g1 += s * d1;
            g2 += d1;
        }
        if g1.abs() < GRAD_EPS && g2.abs() < GRAD_EPS {
            return Ok((a, b));
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        let mut accepted = false;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(decisions, &t, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent left at machine precision; the current point is the answer.
            return Ok((a, b));
        }
    }
    Err(ClassifierError::NotConverged {
        iterations: max_iter,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_signal_gives_smoothed_base_rate() {
        let s = vec![0.0; 100];
        let y: Vec<bool> = (0..100).map(|i| i < 20).collect();
        let (a, b) = fit_platt(&s, &y, 100).unwrap();
        assert_eq!(a, 0.0);
        let p = platt_probability(a, b, 0.0);
        let smoothed = (20.0 * (21.0 / 22.0) + 80.0 * (1.0 / 82.0)) / 100.0;
        assert!((p - smoothed).abs() < 1e-6, "{p} vs {smoothed}");

        // Constant but nonzero decisions: A is not identifiable, P is.
        let s = vec![0.7; 100];
        let (a, b) = fit_platt(&s, &y, 100).unwrap();
        assert!(a.abs() < 1.0);
        assert!((platt_probability(a, b, 0.7) - smoothed).abs() < 1e-5);
    }

    #[test]
    fn sign_convention() {
        let y: Vec<bool> = (0..50).map(|i| i % 2 == 0).collect();
        let s: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        let (a, _) = fit_platt(&s, &y, 100).unwrap();
        assert!(a < 0.0);
    }

    #[test]
    fn recovers_generating_sigmoid() {
        let (a_true, b_true) = (-2.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<bool> = s
            .iter()
            .map(|&si| rng.random::<f64>() < platt_probability(a_true, b_true, si))
            .collect();
        let (a, b) = fit_platt(&s, &y, 100).unwrap();
        assert!((a - a_true).abs() <= 0.1 * a_true.abs(), "A = {a}");
        assert!((b - b_true).abs() <= 0.1 * b_true.abs(), "B = {b}");
    }

    #[test]
    fn single_class_and_iteration_cap() {
        assert!(matches!(
            fit_platt(&[0.1, 0.2], &[true, true], 10),
            Err(ClassifierError::SingleClass)
        ));
        let s: Vec<f64> = (0..40).map(|i| i as f64 / 10.0 - 2.0).collect();
        let y: Vec<bool> = s.iter().map(|&v| v > 0.3).collect();
        assert!(matches!(
            fit_platt(&s, &y, 1),
            Err(ClassifierError::NotConverged { .. })
        ));
    }

    #[test]
    fn monotone_in_decision() {
        let (a, b) = (-1.7, 0.3);
        let mut prev = 0.0;
        for k in 0..100 {
            let p = platt_probability(a, b, -5.0 + k as f64 * 0.1);
            assert!(p > prev);
            prev = p;
        }
    }
}
