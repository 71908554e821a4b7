use nalgebra::{DMatrix, DVector};

use super::{normal_logpdf, normal_logpdf_dstd, GaussianMoments, StateSpaceModel};
use crate::error::{invalid, Result};
use crate::prng::RngStream;

/// `z_1 ~ N(m0, P0)`, `z_t ~ N(A z_{t-1}, Q)`, `x_t ~ N(C z_t, R)` with
/// diagonal `P0`, `Q`, `R`. `theta` is the concatenation of the process and
/// observation noise standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianSsm {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q_std: Vec<f64>,
    r_std: Vec<f64>,
    m0: Vec<f64>,
    p0_std: Vec<f64>,
}

fn check_var(name: &str, v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return invalid(format!("{name} must be positive definite (all diagonal entries > 0)"));
    }
    Ok(v.iter().map(|x| x.sqrt()).collect())
}

impl LinearGaussianSsm {
    /// `q`, `r`, `p0` are diagonal variances.
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>, q: &[f64], r: &[f64], m0: &[f64], p0: &[f64]) -> Result<Self> {
        let dz = a.nrows();
        if a.ncols() != dz || c.ncols() != dz || q.len() != dz || m0.len() != dz || p0.len() != dz || r.len() != c.nrows() {
            return invalid("linear-Gaussian model: inconsistent dimensions");
        }
        Ok(Self {
            q_std: check_var("Q", q)?,
            r_std: check_var("R", r)?,
            p0_std: check_var("P0", p0)?,
            m0: m0.to_vec(),
            a,
            c,
        })
    }

    pub fn scalar(a: f64, c: f64, q: f64, r: f64, m0: f64, p0: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, c), &[q], &[r], &[m0], &[p0])
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn q_diag(&self) -> Vec<f64> {
        self.q_std.iter().map(|s| s * s).collect()
    }

    pub fn r_diag(&self) -> Vec<f64> {
        self.r_std.iter().map(|s| s * s).collect()
    }

    pub fn m0(&self) -> &[f64] {
        &self.m0
    }

    pub fn p0_diag(&self) -> Vec<f64> {
        self.p0_std.iter().map(|s| s * s).collect()
    }

    fn trans_mean(&self, z_prev: &[f64]) -> DVector<f64> {
        &self.a * DVector::from_column_slice(z_prev)
    }

    fn obs_mean(&self, z: &[f64]) -> DVector<f64> {
        &self.c * DVector::from_column_slice(z)
    }
}

fn diag_logpdf(x: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    x.iter().zip(mean).zip(std).map(|((x, m), s)| normal_logpdf(*x, *m, *s)).sum()
}

fn diag_sample(mean: &[f64], std: &[f64], rng: &mut RngStream) -> Vec<f64> {
    mean.iter().zip(std).map(|(m, s)| m + s * rng.std_normal()).collect()
}

impl StateSpaceModel for LinearGaussianSsm {
    fn dim_z(&self) -> usize {
        self.a.nrows()
    }

    fn dim_x(&self) -> usize {
        self.c.nrows()
    }

    fn log_init(&self, z: &[f64]) -> f64 {
        diag_logpdf(z, &self.m0, &self.p0_std)
    }

    fn sample_init(&self, rng: &mut RngStream) -> Vec<f64> {
        diag_sample(&self.m0, &self.p0_std, rng)
    }

    fn log_trans(&self, _t: usize, z_prev: &[f64], z: &[f64]) -> f64 {
        diag_logpdf(z, self.trans_mean(z_prev).as_slice(), &self.q_std)
    }

    fn sample_trans(&self, _t: usize, z_prev: &[f64], rng: &mut RngStream) -> Vec<f64> {
        diag_sample(self.trans_mean(z_prev).as_slice(), &self.q_std, rng)
    }

    fn log_obs(&self, _t: usize, z: &[f64], x: &[f64]) -> f64 {
        diag_logpdf(x, self.obs_mean(z).as_slice(), &self.r_std)
    }

    fn sample_obs(&self, _t: usize, z: &[f64], rng: &mut RngStream) -> Vec<f64> {
        diag_sample(self.obs_mean(z).as_slice(), &self.r_std, rng)
    }

    fn prior_moments(&self, _t: usize, z_prev: Option<&[f64]>) -> Option<GaussianMoments> {
        Some(match z_prev {
            None => GaussianMoments {
                mean: self.m0.clone(),
                std: self.p0_std.clone(),
            },
            Some(zp) => GaussianMoments {
                mean: self.trans_mean(zp).as_slice().to_vec(),
                std: self.q_std.clone(),
            },
        })
    }

    fn theta(&self) -> Vec<f64> {
        self.q_std.iter().chain(&self.r_std).cloned().collect()
    }

    fn theta_names(&self) -> Vec<String> {
        let (dz, dx) = (self.dim_z(), self.dim_x());
        if dz == 1 && dx == 1 {
            return vec!["sigma_v".into(), "sigma_w".into()];
        }
        (0..dz)
            .map(|i| format!("sigma_v_{i}"))
            .chain((0..dx).map(|i| format!("sigma_w_{i}")))
            .collect()
    }

    fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let dz = self.dim_z();
        if theta.len() != dz + self.dim_x() {
            return invalid("linear-Gaussian model: wrong number of parameters");
        }
        let sq: Vec<f64> = theta.iter().map(|s| s * s).collect();
        if theta.iter().any(|s| !(*s > 0.0)) {
            return invalid("noise standard deviations must be positive");
        }
        Self::new(self.a.clone(), self.c.clone(), &sq[..dz], &sq[dz..], &self.m0, &self.p0_diag())
    }

    fn grad_theta_log_joint(&self, _t: usize, z_prev: Option<&[f64]>, z: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let mut g = Vec::with_capacity(self.dim_z() + self.dim_x());
        match z_prev {
            Some(zp) => {
                let m = self.trans_mean(zp);
                g.extend(z.iter().zip(m.iter()).zip(&self.q_std).map(|((z, m), s)| normal_logpdf_dstd(*z, *m, *s)));
            }
            None => g.extend(std::iter::repeat_n(0.0, self.dim_z())),
        }
        let m = self.obs_mean(z);
        g.extend(x.iter().zip(m.iter()).zip(&self.r_std).map(|((x, m), s)| normal_logpdf_dstd(*x, *m, *s)));
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::simulate;

    #[test]
    fn rejects_non_pd() {
        assert!(LinearGaussianSsm::scalar(1.0, 1.0, 0.0, 1.0, 0.0, 1.0).is_err());
        assert!(LinearGaussianSsm::scalar(1.0, 1.0, 1.0, -1.0, 0.0, 1.0).is_err());
        assert!(LinearGaussianSsm::scalar(1.0, 1.0, 1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn first_observation_marginal_variance() {
        let m = LinearGaussianSsm::scalar(1.0, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let root = RngStream::new(5, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|i| simulate(&m, 1, &mut root.substream(i)).unwrap().x[0][0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 2.0).abs() < 0.03 * 2.0, "var {var}");
    }

    #[test]
    fn two_dim_densities_factorize() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
        let c = DMatrix::identity(2, 2);
        let m = LinearGaussianSsm::new(a, c, &[1.0, 0.5], &[0.3, 2.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let zp = [0.5, -1.0];
        let z = [0.2, 0.1];
        let mean = [0.9 * 0.5 - 0.1, -0.8];
        let expect = normal_logpdf(z[0], mean[0], 1.0) + normal_logpdf(z[1], mean[1], 0.5f64.sqrt());
        assert!((m.log_trans(2, &zp, &z) - expect).abs() < 1e-12);
    }
}
