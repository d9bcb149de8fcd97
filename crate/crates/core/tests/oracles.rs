mod common;

use common::*;
use longic::classifier::{train_calibrated, train_svm, SvmParams};

#[test]
fn analytic_gradients_match_finite_differences() {
    let r = gradient_suite(120, 11);
    assert!(r.proba <= 1e-5, "{r:?}");
    assert!(r.jacobian <= 1e-5, "{r:?}");
    assert!(r.objective <= 1e-5, "{r:?}");
    assert!(r.value <= 1e-12, "{r:?}");
}

#[test]
fn projection_matches_lattice_search() {
    let r = projection_suite(40, 12);
    assert_eq!(r.infeasible, 0);
    assert!(r.lattice <= 2e-3, "{r:?}");
    assert!(r.idempotence <= 1e-10, "{r:?}");
}

#[test]
fn smo_reaches_the_reference_dual_optimum() {
    let r = svm_suite(6, 13);
    assert!(r.max_relative_gap <= 1e-4, "{r:?}");
    assert!(r.max_kkt <= 1e-3, "{r:?}");
}

#[test]
fn two_moons_are_separated() {
    let mut rng = rng(14);
    let (x, y) = two_moons(&mut rng, 200, 0.1);
    let m = train_svm(&x, &y, &SvmParams::new(10.0, 0.3)).unwrap();
    let correct = (0..x.rows())
        .filter(|&i| (m.decision_value(x.row(i)).unwrap() > 0.0) == y[i])
        .count();
    assert!(correct as f64 / x.rows() as f64 >= 0.95);
    assert!(m.kkt_violation(&x, &y) <= 1e-3);
}

#[test]
fn calibrated_model_agrees_with_term_by_term_evaluation() {
    let mut rng = rng(15);
    let (x, y) = two_moons(&mut rng, 120, 0.2);
    let clf = train_calibrated(&x, &y, &SvmParams::new(1.0, 0.5), 3).unwrap();
    for i in 0..x.rows() {
        let q = x.row(i);
        assert!((clf.decision_value(q).unwrap() - naive_decision(&clf, q)).abs() < 1e-12);
        assert!((clf.predict_proba(q).unwrap() - naive_proba(&clf, q)).abs() < 1e-12);
    }
}

#[test]
fn indirect_estimate_agrees_with_definition() {
    let mut rng = rng(16);
    for _ in 0..50 {
        let phi = random_phi(&mut rng, 25, 3, 2, 2);
        let x_u = [rng_f(&mut rng), rng_f(&mut rng)];
        let x_d = [rng_f(&mut rng), rng_f(&mut rng), rng_f(&mut rng)];
        let a = phi.estimate(&x_u, &x_d).unwrap();
        let b = naive_phi(&phi, &x_u, &x_d);
        assert!(max_abs_diff(&a, &b) < 1e-12);
    }
}

fn rng_f<R: rand::Rng>(r: &mut R) -> f64 {
    r.random()
}
