//! State-space models `p(z_1) p(x_1|z_1) prod_t p(z_t|z_{t-1}) p(x_t|z_t)`.
//!
//! Time indices are 1-based. The transition "into" step `t` is evaluated with
//! that `t`, so the first transition uses `t = 2`.

mod benchmark;
mod dataset;
mod lgssm;

pub use benchmark::{nssm_f, nssm_g, BenchmarkNssm};
pub use dataset::{Dataset, Sequence};
pub use lgssm::LinearGaussianSsm;

use crate::error::{invalid, Error, Result};
use crate::prng::RngStream;

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Mean and per-dimension standard deviation of a diagonal Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMoments {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Interface every model exposes to the particle filter, the adaptation loop
/// and PMMH. Models are immutable; `with_theta` builds a sibling model.
pub trait StateSpaceModel {
    fn dim_z(&self) -> usize;
    fn dim_x(&self) -> usize;

    fn log_init(&self, z: &[f64]) -> f64;
    fn sample_init(&self, rng: &mut RngStream) -> Vec<f64>;

    /// `log p(z | z_prev)` for the transition into step `t >= 2`.
    fn log_trans(&self, t: usize, z_prev: &[f64], z: &[f64]) -> f64;
    fn sample_trans(&self, t: usize, z_prev: &[f64], rng: &mut RngStream) -> Vec<f64>;

    /// `log p(x | z)` at step `t`.
    fn log_obs(&self, t: usize, z: &[f64], x: &[f64]) -> f64;
    fn sample_obs(&self, t: usize, z: &[f64], rng: &mut RngStream) -> Vec<f64>;

    /// Moments of the Gaussian prior for `z_t` (`z_prev = None` at `t = 1`).
    /// `None` when the prior is not Gaussian.
    fn prior_moments(&self, t: usize, z_prev: Option<&[f64]>) -> Option<GaussianMoments>;

    /// Learnable parameters (noise standard deviations for the shipped models).
    fn theta(&self) -> Vec<f64>;
    fn theta_names(&self) -> Vec<String>;
    fn with_theta(&self, theta: &[f64]) -> Result<Self>
    where
        Self: Sized;

    /// `d/dtheta [log p(z_t | z_{t-1}) + log p(x_t | z_t)]` (the initial
    /// density replaces the transition at `t = 1`).
    fn grad_theta_log_joint(&self, _t: usize, _z_prev: Option<&[f64]>, _z: &[f64], _x: &[f64]) -> Result<Vec<f64>> {
        Err(Error::Unsupported("model has no differentiable parameters".into()))
    }

    /// Typical magnitudes of `z` and `x`, used to normalize network inputs.
    fn feature_scales(&self) -> (f64, f64) {
        (1.0, 1.0)
    }
}

/// `log N(x; mean, diag(var))`.
pub fn diag_gaussian_log_density(x: &[f64], mean: &[f64], var: &[f64]) -> Result<f64> {
    if x.len() != mean.len() || x.len() != var.len() {
        return invalid("gaussian log-density: dimension mismatch");
    }
    if var.iter().any(|v| !(*v > 0.0)) {
        return invalid("gaussian log-density: covariance is not positive definite");
    }
    Ok(x.iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| -HALF_LN_2PI - 0.5 * v.ln() - 0.5 * (x - m).powi(2) / v)
        .sum())
}

#[inline]
pub(crate) fn normal_logpdf(x: f64, mean: f64, std: f64) -> f64 {
    let u = (x - mean) / std;
    -HALF_LN_2PI - std.ln() - 0.5 * u * u
}

/// `d/dstd log N(x; mean, std^2)`.
#[inline]
pub(crate) fn normal_logpdf_dstd(x: f64, mean: f64, std: f64) -> f64 {
    let u = (x - mean) / std;
    (u * u - 1.0) / std
}

/// Ancestral sampling of one length-`len` sequence with latent ground truth.
pub fn simulate<M: StateSpaceModel + ?Sized>(model: &M, len: usize, rng: &mut RngStream) -> Result<Sequence> {
    if len == 0 {
        return invalid("simulate: sequence length must be at least 1");
    }
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(len);
    let mut xs = Vec::with_capacity(len);
    for t in 1..=len {
        let z = if t == 1 {
            model.sample_init(rng)
        } else {
            model.sample_trans(t, &zs[t - 2], rng)
        };
        xs.push(model.sample_obs(t, &z, rng));
        zs.push(z);
    }
    Ok(Sequence { x: xs, z: Some(zs) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_log_densities() {
        let v = diag_gaussian_log_density(&[0.0], &[0.0], &[1.0]).unwrap();
        assert!((v + 0.918_938_5).abs() < 1e-7);
        let v = diag_gaussian_log_density(&[1.0], &[0.0], &[1.0]).unwrap();
        assert!((v + 1.418_938_5).abs() < 1e-7);
        let joint = diag_gaussian_log_density(&[0.3, -1.2], &[0.1, 0.4], &[2.0, 0.5]).unwrap();
        let parts = diag_gaussian_log_density(&[0.3], &[0.1], &[2.0]).unwrap() + diag_gaussian_log_density(&[-1.2], &[0.4], &[0.5]).unwrap();
        assert!((joint - parts).abs() < 1e-12);
        assert!(diag_gaussian_log_density(&[0.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn simulate_rejects_empty() {
        let m = BenchmarkNssm::paper();
        assert!(simulate(&m, 0, &mut RngStream::new(0, 0)).is_err());
    }
}
