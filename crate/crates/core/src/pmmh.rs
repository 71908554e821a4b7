//! Particle marginal Metropolis-Hastings over the model parameters.

use std::io::Write;

use statrs::function::gamma::ln_gamma;

use crate::adapt::{Adapter, TrainSource};
use crate::error::{invalid, Error, Result};
use crate::metrics::{kalman_filter, quantile};
use crate::models::{Dataset, LinearGaussianSsm, StateSpaceModel};
use crate::prng::{tags, RngStream};
use crate::proposals::ProposalModel;
use crate::smc::{run_smc, SmcConfig};

/// Inverse-gamma density with shape `a` and scale `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGamma {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0) {
            return invalid(format!("inverse-gamma needs a, b > 0 (got {shape}, {scale})"));
        }
        Ok(Self { shape, scale })
    }

    pub fn log_pdf(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.shape, self.scale);
        a * b.ln() - ln_gamma(a) - (a + 1.0) * v.ln() - b / v
    }
}

/// Log prior of a vector of noise stds whose squares carry independent
/// inverse-gamma priors (includes the `2 sigma` change-of-variables term).
pub fn log_prior(theta: &[f64], priors: &[InverseGamma]) -> f64 {
    theta
        .iter()
        .zip(priors)
        .map(|(&s, p)| {
            if s <= 0.0 {
                f64::NEG_INFINITY
            } else {
                p.log_pdf(s * s) + (2.0 * s).ln()
            }
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PmmhConfig {
    pub iterations: usize,
    pub n_particles: usize,
    pub rw_scale: Vec<f64>,
    pub prior: Vec<InverseGamma>,
    pub theta_init: Vec<f64>,
    /// Readapt the proposal every this many MH steps (0 = never).
    pub readapt_every: usize,
    /// Adaptation iterations per readapt.
    pub readapt_iters: usize,
    pub pretrain_iters: usize,
}

impl PmmhConfig {
    /// Settings used for the benchmark model: theta = (sigma_v, sigma_w).
    pub fn benchmark(iterations: usize, n_particles: usize) -> Self {
        let ig = InverseGamma { shape: 0.01, scale: 0.01 };
        Self {
            iterations,
            n_particles,
            rw_scale: vec![0.15f64.sqrt(), 0.08f64.sqrt()],
            prior: vec![ig, ig],
            theta_init: vec![10.0, 10.0],
            readapt_every: 1,
            readapt_iters: 1,
            pretrain_iters: 500,
        }
    }

    pub fn validate(&self, n_theta: usize) -> Result<()> {
        if self.n_particles == 0 {
            return invalid("PMMH needs at least one particle");
        }
        if self.rw_scale.len() != n_theta || self.prior.len() != n_theta || self.theta_init.len() != n_theta {
            return invalid(format!("PMMH settings must have one entry per parameter ({n_theta})"));
        }
        if self.rw_scale.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return invalid("random-walk scales must be finite and non-negative");
        }
        if self.prior.iter().any(|p| !(p.shape > 0.0 && p.scale > 0.0)) {
            return invalid("inverse-gamma priors need a, b > 0");
        }
        if self.theta_init.iter().any(|t| !(*t > 0.0)) {
            return invalid("initial parameters must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub lml_hat: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PmmhChainState {
    pub theta: Vec<f64>,
    pub log_prior: f64,
    pub lml_hat: f64,
    pub accept_count: usize,
    /// Proposals rejected because the filter collapsed.
    pub degenerate_rejections: usize,
    pub trace: Vec<TraceRow>,
}

impl PmmhChainState {
    pub fn acceptance_rate(&self) -> f64 {
        if self.trace.is_empty() {
            0.0
        } else {
            self.accept_count as f64 / self.trace.len() as f64
        }
    }

    /// Parameter `index` over the whole trace.
    pub fn samples(&self, index: usize) -> Vec<f64> {
        self.trace.iter().map(|r| r.theta[index]).collect()
    }

    pub fn write_trace_csv<W: Write>(&self, w: W, names: &[String]) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["iter".to_string()];
        header.extend(names.iter().cloned());
        header.extend(["lml_hat".to_string(), "accepted".to_string()]);
        out.write_record(&header)?;
        for r in &self.trace {
            let mut row = vec![r.iteration.to_string()];
            row.extend(r.theta.iter().map(|v| v.to_string()));
            row.push(r.lml_hat.to_string());
            row.push(u8::from(r.accepted).to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Key-value summary: acceptance rate and per-parameter quantiles.
    pub fn summary_text(&self, names: &[String], burn_in: usize) -> String {
        let mut lines = vec![
            format!("  \"iterations\": {}", self.trace.len()),
            format!("  \"burn_in\": {burn_in}"),
            format!("  \"acceptance_rate\": {}", self.acceptance_rate()),
            format!("  \"degenerate_rejections\": {}", self.degenerate_rejections),
        ];
        for (i, name) in names.iter().enumerate() {
            let s: Vec<f64> = self.samples(i).into_iter().skip(burn_in).collect();
            if s.is_empty() {
                continue;
            }
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            lines.push(format!("  \"{name}.mean\": {mean}"));
            for (label, q) in [("q05", 0.05), ("q50", 0.5), ("q95", 0.95)] {
                lines.push(format!("  \"{name}.{label}\": {}", quantile(&s, q)));
            }
        }
        format!("{{\n{}\n}}\n", lines.join(",\n"))
    }
}

/// First trace index at which parameter `index` lies within `tol` of `target`.
pub fn first_passage(trace: &[TraceRow], index: usize, target: f64, tol: f64) -> Option<usize> {
    trace.iter().position(|r| (r.theta[index] - target).abs() < tol)
}

/// Source of (log) marginal-likelihood estimates for the MH ratio.
pub trait LikelihoodEstimator<M> {
    fn log_likelihood(&mut self, model: &M, data: &Dataset, rng: RngStream) -> Result<f64>;

    /// Hook run after every MH step with the chain's current model.
    fn after_step(&mut self, _model: &M, _data: &Dataset, _iteration: usize) -> Result<()> {
        Ok(())
    }
}

/// Exact likelihood for linear-Gaussian models; turns PMMH into plain MH.
#[derive(Clone, Copy, Debug, Default)]
pub struct KalmanEstimator;

impl LikelihoodEstimator<LinearGaussianSsm> for KalmanEstimator {
    fn log_likelihood(&mut self, model: &LinearGaussianSsm, data: &Dataset, _rng: RngStream) -> Result<f64> {
        data.sequences
            .iter()
            .map(|s| Ok(kalman_filter(model, &s.x)?.log_marginal_likelihood))
            .sum()
    }
}

/// Particle-filter estimator with a bootstrap, fixed, or continually
/// readapted proposal.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum SmcEstimator<M> {
    Bootstrap {
        smc: SmcConfig,
    },
    Fixed {
        smc: SmcConfig,
        proposal: ProposalModel,
    },
    Adaptive {
        smc: SmcConfig,
        adapter: Box<Adapter<M>>,
        every: usize,
        iters: usize,
    },
}

impl<M: StateSpaceModel + Clone> SmcEstimator<M> {
    pub fn proposal(&self) -> Option<&ProposalModel> {
        match self {
            Self::Bootstrap { .. } => None,
            Self::Fixed { proposal, .. } => Some(proposal),
            Self::Adaptive { adapter, .. } => Some(adapter.proposal()),
        }
    }

    fn smc(&self) -> &SmcConfig {
        match self {
            Self::Bootstrap { smc } | Self::Fixed { smc, .. } | Self::Adaptive { smc, .. } => smc,
        }
    }
}

impl<M: StateSpaceModel + Clone> LikelihoodEstimator<M> for SmcEstimator<M> {
    fn log_likelihood(&mut self, model: &M, data: &Dataset, rng: RngStream) -> Result<f64> {
        let mut cfg = self.smc().clone();
        cfg.record_tapes = false;
        cfg.record_filtering_stats = false;
        let q = self.proposal();
        let mut total = 0.0;
        for (j, s) in data.sequences.iter().enumerate() {
            total += run_smc(&cfg, model, q, &s.x, rng.substream(j as u64))?.log_marginal_likelihood();
        }
        Ok(total)
    }

    fn after_step(&mut self, model: &M, data: &Dataset, iteration: usize) -> Result<()> {
        if let Self::Adaptive { adapter, every, iters, .. } = self {
            if *every > 0 && (iteration + 1).is_multiple_of(*every) {
                adapter.set_model(model.clone())?;
                adapter.config.train_source = TrainSource::Dataset;
                for _ in 0..*iters {
                    adapter.iterate(Some(data))?;
                }
            }
        }
        Ok(())
    }
}

/// Starts a chain at `cfg.theta_init`, estimating its likelihood.
pub fn init_chain<M, E>(cfg: &PmmhConfig, template: &M, estimator: &mut E, data: &Dataset, rng: &RngStream) -> Result<PmmhChainState>
where
    M: StateSpaceModel,
    E: LikelihoodEstimator<M>,
{
    cfg.validate(template.theta().len())?;
    let model = template.with_theta(&cfg.theta_init)?;
    let lml_hat = estimator.log_likelihood(&model, data, rng.substream(tags::INIT))?;
    if !lml_hat.is_finite() {
        return Err(Error::Numerical("initial likelihood estimate is not finite".into()));
    }
    Ok(PmmhChainState {
        theta: cfg.theta_init.clone(),
        log_prior: log_prior(&cfg.theta_init, &cfg.prior),
        lml_hat,
        accept_count: 0,
        degenerate_rejections: 0,
        trace: Vec::new(),
    })
}

/// One random-walk MH step.
pub fn pmmh_step<M, E>(state: &mut PmmhChainState, cfg: &PmmhConfig, template: &M, estimator: &mut E, data: &Dataset, rng: &RngStream) -> Result<()>
where
    M: StateSpaceModel,
    E: LikelihoodEstimator<M>,
{
    let iter = state.trace.len();
    let mut prop_rng = rng.substream(tags::PMMH_PROPOSAL).substream(iter as u64);
    let theta_star: Vec<f64> = state
        .theta
        .iter()
        .zip(&cfg.rw_scale)
        .map(|(&th, &s)| th + s * prop_rng.std_normal())
        .collect();

    let accepted = if theta_star == state.theta {
        true
    } else if theta_star.iter().any(|v| *v <= 0.0) {
        false
    } else {
        let lp_star = log_prior(&theta_star, &cfg.prior);
        let model = template.with_theta(&theta_star)?;
        match estimator.log_likelihood(&model, data, rng.substream(tags::PMMH_SMC).substream(iter as u64)) {
            Ok(lml_star) => {
                let log_alpha = lml_star + lp_star - state.lml_hat - state.log_prior;
                let u = rng.substream(tags::PMMH_ACCEPT).substream(iter as u64).uniform01();
                let accept = lml_star.is_finite() && u.ln() < log_alpha;
                if accept {
                    state.theta = theta_star;
                    state.log_prior = lp_star;
                    state.lml_hat = lml_star;
                }
                accept
            }
            Err(Error::DegenerateWeights { .. }) => {
                state.degenerate_rejections += 1;
                false
            }
            Err(e) => return Err(e),
        }
    };
    if accepted {
        state.accept_count += 1;
    }
    state.trace.push(TraceRow {
        iteration: iter,
        theta: state.theta.clone(),
        lml_hat: state.lml_hat,
        accepted,
    });
    let current = template.with_theta(&state.theta)?;
    estimator.after_step(&current, data, iter)
}

/// Runs `cfg.iterations` MH steps from `theta_init`.
pub fn run_pmmh<M, E>(cfg: &PmmhConfig, template: &M, estimator: &mut E, data: &Dataset, rng: &RngStream) -> Result<PmmhChainState>
where
    M: StateSpaceModel,
    E: LikelihoodEstimator<M>,
{
    let mut state = init_chain(cfg, template, estimator, data, rng)?;
    for _ in 0..cfg.iterations {
        pmmh_step(&mut state, cfg, template, estimator, data, rng)?;
    }
    Ok(state)
}

/// Builds an adaptive estimator, pretraining the proposal on sequences
/// simulated at `cfg.theta_init`.
pub fn pretrained_estimator<M: StateSpaceModel + Clone>(
    cfg: &PmmhConfig,
    template: &M,
    mut adapter: Adapter<M>,
    seq_len: usize,
) -> Result<SmcEstimator<M>> {
    adapter.set_model(template.with_theta(&cfg.theta_init)?)?;
    adapter.config.train_source = TrainSource::Generative { seq_len };
    for _ in 0..cfg.pretrain_iters {
        adapter.iterate(None)?;
    }
    let mut smc = adapter.config.smc.clone();
    smc.n_particles = cfg.n_particles;
    Ok(SmcEstimator::Adaptive {
        smc,
        adapter: Box::new(adapter),
        every: cfg.readapt_every,
        iters: cfg.readapt_iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{simulate, BenchmarkNssm};

    #[test]
    fn inverse_gamma_normalizes() {
        let ig = InverseGamma::new(3.0, 2.0).unwrap();
        let h = 1e-3;
        let total: f64 = (1..40_000).map(|i| ig.log_pdf(i as f64 * h).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
        assert!(InverseGamma::new(0.0, 1.0).is_err());
    }

    #[test]
    fn log_prior_rejects_non_positive() {
        let ig = InverseGamma { shape: 0.01, scale: 0.01 };
        assert_eq!(log_prior(&[1.0, -0.1], &[ig, ig]), f64::NEG_INFINITY);
        assert!(log_prior(&[1.0, 0.5], &[ig, ig]).is_finite());
    }

    #[test]
    fn zero_scale_chain_stays_put() {
        let model = BenchmarkNssm::paper();
        let seq = simulate(&model, 20, &mut RngStream::new(1, 0)).unwrap();
        let data = Dataset::new(vec![seq]).unwrap();
        let mut cfg = PmmhConfig::benchmark(5, 20);
        cfg.rw_scale = vec![0.0, 0.0];
        let mut est = SmcEstimator::<BenchmarkNssm>::Bootstrap { smc: SmcConfig::new(20) };
        let st = run_pmmh(&cfg, &model, &mut est, &data, &RngStream::new(2, 0)).unwrap();
        assert_eq!(st.trace.len(), 5);
        assert!(st.trace.iter().all(|r| r.theta == vec![10.0, 10.0] && r.lml_hat == st.lml_hat));
        assert_eq!(st.acceptance_rate(), 1.0);
    }

    #[test]
    fn acceptance_rate_is_interior() {
        let model = BenchmarkNssm::paper();
        let seq = simulate(&model, 50, &mut RngStream::new(3, 0)).unwrap();
        let data = Dataset::new(vec![seq]).unwrap();
        let cfg = PmmhConfig::benchmark(200, 50);
        let mut est = SmcEstimator::<BenchmarkNssm>::Bootstrap { smc: SmcConfig::new(50) };
        let st = run_pmmh(&cfg, &model, &mut est, &data, &RngStream::new(4, 0)).unwrap();
        let r = st.acceptance_rate();
        assert!(r > 0.0 && r < 1.0, "{r}");
        let text = st.summary_text(&model.theta_names(), 50);
        assert!(text.contains("\"acceptance_rate\""));
        assert!(text.contains("\"sigma_w.q50\""));
    }
}
