use super::{normal_logpdf, normal_logpdf_dstd, GaussianMoments, StateSpaceModel};
use crate::error::{invalid, Result};
use crate::prng::RngStream;

/// Transition mean of the benchmark model for the step into `t`.
pub fn nssm_f(z: f64, t: usize) -> f64 {
    z / 2.0 + 25.0 * z / (1.0 + z * z) + 8.0 * (1.2 * t as f64).cos()
}

/// Observation mean of the benchmark model.
pub fn nssm_g(z: f64) -> f64 {
    z * z / 20.0
}

/// The classic scalar nonlinear benchmark:
/// `z_1 ~ N(0, init_var)`, `z_t ~ N(f(z_{t-1}, t), sigma_v^2)`,
/// `x_t ~ N(g(z_t), sigma_w^2)`. `theta = (sigma_v, sigma_w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkNssm {
    sigma_v: f64,
    sigma_w: f64,
    init_var: f64,
}

impl BenchmarkNssm {
    pub fn new(sigma_v: f64, sigma_w: f64) -> Result<Self> {
        Self::with_init_var(sigma_v, sigma_w, 5.0)
    }

    pub fn with_init_var(sigma_v: f64, sigma_w: f64, init_var: f64) -> Result<Self> {
        if !(sigma_v > 0.0 && sigma_w > 0.0 && init_var > 0.0) || !(sigma_v.is_finite() && sigma_w.is_finite()) {
            return invalid(format!(
                "benchmark model needs positive noise scales, got sigma_v={sigma_v}, sigma_w={sigma_w}, init_var={init_var}"
            ));
        }
        Ok(Self { sigma_v, sigma_w, init_var })
    }

    /// `(sigma_v, sigma_w) = (sqrt(10), 1)`.
    pub fn paper() -> Self {
        Self::new(10f64.sqrt(), 1.0).expect("valid constants")
    }

    pub fn sigma_v(&self) -> f64 {
        self.sigma_v
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn init_var(&self) -> f64 {
        self.init_var
    }
}

impl StateSpaceModel for BenchmarkNssm {
    fn dim_z(&self) -> usize {
        1
    }

    fn dim_x(&self) -> usize {
        1
    }

    fn log_init(&self, z: &[f64]) -> f64 {
        normal_logpdf(z[0], 0.0, self.init_var.sqrt())
    }

    fn sample_init(&self, rng: &mut RngStream) -> Vec<f64> {
        vec![self.init_var.sqrt() * rng.std_normal()]
    }

    fn log_trans(&self, t: usize, z_prev: &[f64], z: &[f64]) -> f64 {
        normal_logpdf(z[0], nssm_f(z_prev[0], t), self.sigma_v)
    }

    fn sample_trans(&self, t: usize, z_prev: &[f64], rng: &mut RngStream) -> Vec<f64> {
        vec![nssm_f(z_prev[0], t) + self.sigma_v * rng.std_normal()]
    }

    fn log_obs(&self, _t: usize, z: &[f64], x: &[f64]) -> f64 {
        normal_logpdf(x[0], nssm_g(z[0]), self.sigma_w)
    }

    fn sample_obs(&self, _t: usize, z: &[f64], rng: &mut RngStream) -> Vec<f64> {
        vec![nssm_g(z[0]) + self.sigma_w * rng.std_normal()]
    }

    fn prior_moments(&self, t: usize, z_prev: Option<&[f64]>) -> Option<GaussianMoments> {
        Some(match z_prev {
            None => GaussianMoments {
                mean: vec![0.0],
                std: vec![self.init_var.sqrt()],
            },
            Some(zp) => GaussianMoments {
                mean: vec![nssm_f(zp[0], t)],
                std: vec![self.sigma_v],
            },
        })
    }

    fn theta(&self) -> Vec<f64> {
        vec![self.sigma_v, self.sigma_w]
    }

    fn theta_names(&self) -> Vec<String> {
        vec!["sigma_v".into(), "sigma_w".into()]
    }

    fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != 2 {
            return invalid("benchmark model has two parameters (sigma_v, sigma_w)");
        }
        Self::with_init_var(theta[0], theta[1], self.init_var)
    }

    fn grad_theta_log_joint(&self, t: usize, z_prev: Option<&[f64]>, z: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let dv = match z_prev {
            Some(zp) => normal_logpdf_dstd(z[0], nssm_f(zp[0], t), self.sigma_v),
            None => 0.0,
        };
        let dw = normal_logpdf_dstd(x[0], nssm_g(z[0]), self.sigma_w);
        Ok(vec![dv, dw])
    }

    fn feature_scales(&self) -> (f64, f64) {
        (10.0, 10.0)
    }
}
