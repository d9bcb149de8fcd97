//! Gaussian (RBF) kernel shared by the SVM and the kernel-regression estimator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{squared_distance, DimensionMismatch};

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum KernelError {
    #[error("kernel bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

/// `k(a, b) = exp(-|a - b|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernel", into = "RawKernel")]
pub struct GaussianKernel {
    sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct RawKernel {
    sigma: f64,
}

impl TryFrom<RawKernel> for GaussianKernel {
    type Error = KernelError;

    fn try_from(raw: RawKernel) -> Result<Self, Self::Error> {
        Self::new(raw.sigma)
    }
}

impl From<GaussianKernel> for RawKernel {
    fn from(k: GaussianKernel) -> Self {
        Self { sigma: k.sigma }
    }
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Result<Self, KernelError> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(Self { sigma })
        } else {
            Err(KernelError::InvalidBandwidth(sigma))
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `1 / (2 sigma^2)`, the factor multiplying the squared distance.
    pub fn gamma(&self) -> f64 {
        0.5 / (self.sigma * self.sigma)
    }

    /// Kernel value from a precomputed squared distance.
    #[inline]
    pub fn from_sq_dist(&self, sq: f64) -> f64 {
        (-sq * self.gamma()).exp()
    }

    /// Unchecked evaluation; callers guarantee equal lengths.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        self.from_sq_dist(squared_distance(a, b))
    }

    pub fn try_eval(&self, a: &[f64], b: &[f64]) -> Result<f64, KernelError> {
        DimensionMismatch::check(a.len(), b.len())?;
        Ok(self.eval(a, b))
    }

    /// Gradient of `k(a, b)` with respect to `b`: `k(a, b) (a - b) / sigma^2`.
    pub fn grad_wrt_second(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>, KernelError> {
        DimensionMismatch::check(a.len(), b.len())?;
        let mut out = vec![0.0; a.len()];
        self.accumulate_grad(a, b, 1.0, &mut out);
        Ok(out)
    }

    /// `out += scale * d k(a, b) / d b`, the building block of model gradients.
    #[inline]
    pub(crate) fn accumulate_grad(&self, a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
        let k = self.eval(a, b);
        let w = scale * k / (self.sigma * self.sigma);
        for ((o, ai), bi) in out.iter_mut().zip(a).zip(b) {
            *o += w * (ai - bi);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(sigma: f64, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - b[i]) * (a[i] - b[i]);
        }
        (-s / (2.0 * sigma * sigma)).exp()
    }

    #[test]
    fn identical_points_give_one() {
        let k = GaussianKernel::new(0.7).unwrap();
        assert_eq!(k.eval(&[0.3, -1.2], &[0.3, -1.2]), 1.0);
    }

    #[test]
    fn analytic_value() {
        let sigma = 0.4;
        let k = GaussianKernel::new(sigma).unwrap();
        let v = k.eval(&[0.0], &[sigma * 2f64.sqrt()]);
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_bandwidth_and_lengths() {
        assert!(GaussianKernel::new(0.0).is_err());
        assert!(GaussianKernel::new(f64::NAN).is_err());
        let k = GaussianKernel::new(1.0).unwrap();
        assert!(matches!(
            k.try_eval(&[1.0], &[1.0, 2.0]),
            Err(KernelError::Dimension(_))
        ));
        assert!(k.grad_wrt_second(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = rng.random_range(1..30);
            let sigma = rng.random_range(0.05..3.0);
            let a: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let k = GaussianKernel::new(sigma).unwrap();
            assert!((k.eval(&a, &b) - naive(sigma, &a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_analytic_cases() {
        let k = GaussianKernel::new(1.0).unwrap();
        assert_eq!(k.grad_wrt_second(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), vec![0.0, 0.0]);
        let g = k.grad_wrt_second(&[0.0], &[1.0]).unwrap();
        assert!((g[0] - (-(-0.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..1000 {
            let p = rng.random_range(1..=20);
            let sigma = rng.random_range(0.2..2.0);
            let k = GaussianKernel::new(sigma).unwrap();
            let a: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            let g = k.grad_wrt_second(&a, &b).unwrap();
            for j in 0..p {
                let mut bp = b.clone();
                let mut bm = b.clone();
                bp[j] += h;
                bm[j] -= h;
                let fd = (naive(sigma, &a, &bp) - naive(sigma, &a, &bm)) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-6, "coord {j}: fd {fd} vs {}", g[j]);
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_bounded_and_decreasing(
            a in prop::collection::vec(0.0f64..1.0, 4),
            b in prop::collection::vec(0.0f64..1.0, 4),
            sigma in 0.1f64..5.0,
            t in 1.01f64..3.0,
        ) {
            let k = GaussianKernel::new(sigma).unwrap();
            let v = k.eval(&a, &b);
            prop_assert_eq!(v, k.eval(&b, &a));
            prop_assert!(v > 0.0 && v <= 1.0);
            // Stretch b away from a: distance grows by factor t.
            let far: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + t * (y - x)).collect();
            if a != b && v > 0.0 {
                prop_assert!(k.eval(&a, &far) <= v);
            }
        }
    }
}
