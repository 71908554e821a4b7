//! Diagonal-covariance Gaussian mixtures (mixture density network heads).

use super::activations::{log_softmax, logsumexp, softmax};
use crate::error::{invalid, Result};
use crate::prng::RngStream;

/// Lower bound on every component standard deviation produced by a network head.
pub const SIGMA_FLOOR: f64 = 1e-3;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Parameters of a `K`-component mixture over `R^D`. `means` and `log_stds`
/// are `K x D` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MdnParams {
    pub mix_logits: Vec<f64>,
    pub means: Vec<f64>,
    pub log_stds: Vec<f64>,
    k: usize,
    d: usize,
}

/// Gradient of a mixture log-density w.r.t. its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MdnGrad {
    pub d_logits: Vec<f64>,
    pub d_means: Vec<f64>,
    pub d_log_stds: Vec<f64>,
}

impl MdnParams {
    pub fn new(mix_logits: Vec<f64>, means: Vec<f64>, log_stds: Vec<f64>) -> Result<Self> {
        let k = mix_logits.len();
        if k == 0 {
            return invalid("mixture needs at least one component");
        }
        if !means.len().is_multiple_of(k) || means.is_empty() || log_stds.len() != means.len() {
            return invalid("mixture means/log_stds must both be K x D");
        }
        let d = means.len() / k;
        Ok(Self {
            mix_logits,
            means,
            log_stds,
            k,
            d,
        })
    }

    /// Single diagonal Gaussian.
    pub fn gaussian(mean: Vec<f64>, std: &[f64]) -> Result<Self> {
        if std.iter().any(|s| !(*s > 0.0)) {
            return invalid("gaussian: std must be positive");
        }
        Self::new(vec![0.0], mean, std.iter().map(|s| s.ln()).collect())
    }

    pub fn components(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.mix_logits)
    }

    /// Raise every standard deviation to at least `floor`.
    pub fn clamp_sigma(&mut self, floor: f64) {
        let lf = floor.ln();
        self.log_stds.iter_mut().for_each(|l| *l = l.max(lf));
    }

    pub fn mixture_mean(&self) -> Vec<f64> {
        let w = self.weights();
        let mut m = vec![0.0; self.d];
        for (k, wk) in w.iter().enumerate() {
            for (j, mj) in m.iter_mut().enumerate() {
                *mj += wk * self.means[k * self.d + j];
            }
        }
        m
    }

    fn component_logs(&self, z: &[f64]) -> Vec<f64> {
        let log_pi = log_softmax(&self.mix_logits);
        (0..self.k)
            .map(|k| {
                let mut acc = log_pi[k];
                for j in 0..self.d {
                    let idx = k * self.d + j;
                    let ls = self.log_stds[idx];
                    let u = (z[j] - self.means[idx]) * (-ls).exp();
                    acc -= HALF_LN_2PI + ls + 0.5 * u * u;
                }
                acc
            })
            .collect()
    }

    /// `log sum_k pi_k N(z; mu_k, diag(sigma_k^2))`, stabilized with log-sum-exp.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.d);
        let comps = self.component_logs(z);
        if self.k == 1 {
            comps[0]
        } else {
            logsumexp(&comps)
        }
    }

    pub fn checked_log_density(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.d {
            return invalid(format!("mixture: expected point of dimension {}, got {}", self.d, z.len()));
        }
        Ok(self.log_density(z))
    }

    pub fn log_density_grad(&self, z: &[f64]) -> (f64, MdnGrad) {
        let comps = self.component_logs(z);
        let total = logsumexp(&comps);
        let pi = softmax(&self.mix_logits);
        let mut g = MdnGrad {
            d_logits: vec![0.0; self.k],
            d_means: vec![0.0; self.k * self.d],
            d_log_stds: vec![0.0; self.k * self.d],
        };
        for k in 0..self.k {
            let r = (comps[k] - total).exp();
            g.d_logits[k] = r - pi[k];
            for j in 0..self.d {
                let idx = k * self.d + j;
                let inv_s = (-self.log_stds[idx]).exp();
                let u = (z[j] - self.means[idx]) * inv_s;
                g.d_means[idx] = r * u * inv_s;
                g.d_log_stds[idx] = r * (u * u - 1.0);
            }
        }
        (total, g)
    }

    /// Draw a component (skipped when `K = 1`), then a Gaussian point.
    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let k = if self.k == 1 { 0 } else { rng.categorical(&self.weights()) };
        (0..self.d)
            .map(|j| {
                let idx = k * self.d + j;
                self.means[idx] + self.log_stds[idx].exp() * rng.std_normal()
            })
            .collect()
    }
}
