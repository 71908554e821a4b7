//! Evaluation metrics and the exact Kalman oracle for linear-Gaussian models.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::models::LinearGaussianSsm;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug)]
pub struct KalmanResult {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub log_marginal_likelihood: f64,
    /// `log p(x_t | x_{1:t-1})` per step.
    pub predictive_log_densities: Vec<f64>,
}

fn mvn_log_density(y: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
    let l = chol.l();
    let logdet: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let sol = chol.solve(y);
    Ok(-0.5 * (y.len() as f64 * LN_2PI + logdet + y.dot(&sol)))
}

/// Exact filtering for `model` over observations `xs`.
pub fn kalman_filter(model: &LinearGaussianSsm, xs: &[Vec<f64>]) -> Result<KalmanResult> {
    let a = model.a();
    let c = model.c();
    let q = DMatrix::from_diagonal(&DVector::from_vec(model.q_diag()));
    let r = DMatrix::from_diagonal(&DVector::from_vec(model.r_diag()));
    let dz = a.nrows();
    let mut m = DVector::from_column_slice(model.m0());
    let mut p = DMatrix::from_diagonal(&DVector::from_vec(model.p0_diag()));
    let mut res = KalmanResult {
        means: Vec::with_capacity(xs.len()),
        covs: Vec::with_capacity(xs.len()),
        log_marginal_likelihood: 0.0,
        predictive_log_densities: Vec::with_capacity(xs.len()),
    };
    for (t, x) in xs.iter().enumerate() {
        if x.len() != c.nrows() {
            return invalid("kalman filter: observation dimension mismatch");
        }
        if t > 0 {
            m = a * &m;
            p = a * &p * a.transpose() + &q;
        }
        let s = c * &p * c.transpose() + &r;
        let y = DVector::from_column_slice(x) - c * &m;
        let ld = mvn_log_density(&y, &s)?;
        let s_inv = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?
            .inverse();
        let k = &p * c.transpose() * s_inv;
        m = &m + &k * y;
        // Joseph form keeps P symmetric positive definite
        let ikc = DMatrix::identity(dz, dz) - &k * c;
        p = &ikc * &p * ikc.transpose() + &k * &r * k.transpose();
        res.log_marginal_likelihood += ld;
        res.predictive_log_densities.push(ld);
        res.means.push(m.clone());
        res.covs.push(p.clone());
    }
    Ok(res)
}

/// Closed-form `p(z_t | z_{t-1}, x_t)` for a linear-Gaussian model
/// (`z_prev = None` conditions on the initial distribution instead).
pub fn lgssm_one_step_posterior(model: &LinearGaussianSsm, z_prev: Option<&[f64]>, x: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let c = model.c();
    let (prior_mean, prior_var) = match z_prev {
        Some(zp) => (model.a() * DVector::from_column_slice(zp), model.q_diag()),
        None => (DVector::from_column_slice(model.m0()), model.p0_diag()),
    };
    let prior_prec = DMatrix::from_diagonal(&DVector::from_iterator(prior_var.len(), prior_var.iter().map(|v| 1.0 / v)));
    let r_inv = DMatrix::from_diagonal(&DVector::from_iterator(x.len(), model.r_diag().iter().map(|v| 1.0 / v)));
    let prec = &prior_prec + c.transpose() * &r_inv * c;
    let cov = prec
        .cholesky()
        .ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))?
        .inverse();
    let mean = &cov * (&prior_prec * prior_mean + c.transpose() * &r_inv * DVector::from_column_slice(x));
    Ok((mean, cov))
}

/// `sqrt((1/T) sum_t |z_t - z_bar_t|^2)`, squared error summed over dimensions.
pub fn rmse(z_true: &[Vec<f64>], z_bar: &[Vec<f64>]) -> Result<f64> {
    if z_true.len() != z_bar.len() || z_true.is_empty() {
        return invalid(format!(
            "rmse: sequences must have equal non-zero length ({} vs {})",
            z_true.len(),
            z_bar.len()
        ));
    }
    let mut acc = 0.0;
    for (a, b) in z_true.iter().zip(z_bar) {
        if a.len() != b.len() {
            return invalid("rmse: dimension mismatch");
        }
        acc += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok((acc / z_true.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

pub fn summarize(name: &str, values: &[f64]) -> Result<MetricSummary> {
    if values.is_empty() {
        return invalid(format!("cannot summarize '{name}': no values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(MetricSummary {
        name: name.to_string(),
        mean,
        std: var.sqrt(),
        count: values.len(),
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Empirical quantile with linear interpolation, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Standard error of the mean of a correlated series from `n_batches`
/// non-overlapping batch means.
pub fn batch_means_se(values: &[f64], n_batches: usize) -> Result<f64> {
    if n_batches < 2 || values.len() < 2 * n_batches {
        return invalid("batch means: need at least two samples per batch and two batches");
    }
    let size = values.len() / n_batches;
    let means: Vec<f64> = values
        .chunks_exact(size)
        .take(n_batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    Ok((var / n_batches as f64).sqrt())
}

/// Two-sided p-value for equal means of two autocorrelated series
/// (normal approximation with batch-means standard errors).
pub fn location_test_p(a: &[f64], b: &[f64], n_batches: usize) -> Result<f64> {
    let ma = a.iter().sum::<f64>() / a.len().max(1) as f64;
    let mb = b.iter().sum::<f64>() / b.len().max(1) as f64;
    let se = (batch_means_se(a, n_batches)?.powi(2) + batch_means_se(b, n_batches)?.powi(2)).sqrt();
    if se == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let z = (ma - mb).abs() / se;
    Ok(statrs::function::erf::erfc(z / std::f64::consts::SQRT_2))
}
