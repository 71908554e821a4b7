//! Stochastic-gradient adaptation of the proposal (and optionally the model).
//!
//! Each iteration draws a minibatch of sequences, runs the particle filter,
//! and forms
//!
//! ```text
//! dphi   = sum_j sum_t sum_n w~_t^n d/dphi   log q_phi(z_t^n | x_{1:t}, ancestry)
//! dtheta = sum_j sum_t sum_n w~_t^n d/dtheta log p_theta(x_t, z_t^n | ancestry)
//! ```
//!
//! with the filtering weights `w~_t` held constant. Both are ascent
//! directions; they are divided by the total number of steps in the
//! minibatch, clipped to a global norm, and handed to Adam as the gradient of
//! the negated objective.

use crate::error::{invalid, Error, Result};
use crate::metrics::rmse;
use crate::models::{simulate, Dataset, Sequence, StateSpaceModel};
use crate::nnet::{Adam, AdamConfig, ParamVector};
use crate::prng::{tags, RngStream};
use crate::proposals::ProposalModel;
use crate::smc::{run_smc, ParticleSystem, SmcConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdaptMode {
    /// One update per minibatch after full filter passes.
    Batch,
    /// One update per time step from that step's weighted particles.
    Online,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainSource {
    /// Minibatches cycle through the supplied dataset.
    Dataset,
    /// Fresh sequences of the given length are simulated from the model.
    Generative { seq_len: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    pub mode: AdaptMode,
    pub minibatch_size: usize,
    pub smc: SmcConfig,
    pub iterations: usize,
    pub phi_optimizer: AdamConfig,
    pub theta_optimizer: AdamConfig,
    pub train_source: TrainSource,
    pub learn_theta: bool,
    /// Global gradient-norm clip applied after length normalization.
    pub clip_norm: Option<f64>,
}

impl AdaptConfig {
    pub fn new(n_particles: usize, iterations: usize) -> Self {
        Self {
            mode: AdaptMode::Batch,
            minibatch_size: 1,
            smc: SmcConfig::new(n_particles),
            iterations,
            phi_optimizer: AdamConfig::default(),
            theta_optimizer: AdamConfig::default(),
            train_source: TrainSource::Generative { seq_len: 1000 },
            learn_theta: false,
            clip_norm: Some(10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.smc.validate()?;
        if self.minibatch_size == 0 {
            return invalid("minibatch size must be at least 1");
        }
        if let TrainSource::Generative { seq_len: 0 } = self.train_source {
            return invalid("generated sequences need positive length");
        }
        Ok(())
    }
}

/// Accumulated ascent directions and diagnostics of one filter pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradEstimate {
    pub phi_grad: Vec<f64>,
    pub theta_grad: Option<Vec<f64>>,
    pub ess_trace: Vec<f64>,
    pub lml: f64,
    pub steps: usize,
}

impl GradEstimate {
    fn check_finite(&self) -> Result<()> {
        let bad = self.phi_grad.iter().chain(self.theta_grad.iter().flatten()).any(|g| !g.is_finite());
        if bad {
            return Err(Error::Numerical("non-finite gradient accumulated".into()));
        }
        Ok(())
    }
}

/// Adds `sum_t sum_n w~_t^n d log q / d phi` for a recorded run into `grad`.
pub fn accumulate_phi_grad(ps: &ParticleSystem, proposal: &ProposalModel, grad: &mut [f64]) -> Result<()> {
    let run = ps
        .proposal_run()
        .ok_or_else(|| Error::State("filter ran without a proposal model; no tapes to differentiate".into()))?;
    run.accumulate_grad(proposal, ps.step_weights(), grad, false)
}

/// Adds `sum_t sum_n w~_t^n d/dtheta log p(x_t, z_t^n | z_{t-1}^{a})` into `grad`.
pub fn accumulate_theta_grad<M: StateSpaceModel + ?Sized>(ps: &ParticleSystem, model: &M, xs: &[Vec<f64>], grad: &mut [f64]) -> Result<()> {
    for t in 1..=ps.t() {
        for (n, &w) in ps.step_weights()[t - 1].iter().enumerate() {
            let z_prev = if t > 1 { Some(ps.state_at(t - 1, ps.parent(t, n))) } else { None };
            let g = model.grad_theta_log_joint(t, z_prev, ps.state_at(t, n), &xs[t - 1])?;
            if g.len() != grad.len() {
                return invalid("theta gradient has the wrong length");
            }
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += w * b;
            }
        }
    }
    Ok(())
}

/// Runs the filter over one sequence and accumulates both gradients.
pub fn estimate_gradients<M: StateSpaceModel + ?Sized>(
    smc: &SmcConfig,
    model: &M,
    proposal: &ProposalModel,
    xs: &[Vec<f64>],
    learn_theta: bool,
    rng: RngStream,
) -> Result<GradEstimate> {
    let mut cfg = smc.clone();
    cfg.record_tapes = true;
    let ps = run_smc(&cfg, model, Some(proposal), xs, rng)?;
    let mut est = GradEstimate {
        phi_grad: vec![0.0; proposal.params().len()],
        ess_trace: ps.ess_trace().to_vec(),
        lml: ps.log_marginal_likelihood(),
        steps: xs.len(),
        ..GradEstimate::default()
    };
    accumulate_phi_grad(&ps, proposal, &mut est.phi_grad)?;
    if learn_theta {
        let mut g = vec![0.0; model.theta().len()];
        accumulate_theta_grad(&ps, model, xs, &mut g)?;
        est.theta_grad = Some(g);
    }
    est.check_finite()?;
    Ok(est)
}

/// One row of the per-iteration diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub mean_ess: f64,
    pub lml: f64,
    pub grad_norm_phi: f64,
    pub grad_norm_theta: f64,
    /// Online-mode LMLs mix several proposals within a pass and are only approximate.
    pub lml_approximate: bool,
}

impl IterationDiagnostics {
    pub const CSV_HEADER: [&'static str; 5] = ["iter", "mean_ess", "lml", "grad_norm_phi", "grad_norm_theta"];

    pub fn csv_row(&self) -> [String; 5] {
        [
            self.iteration.to_string(),
            self.mean_ess.to_string(),
            self.lml.to_string(),
            self.grad_norm_phi.to_string(),
            self.grad_norm_theta.to_string(),
        ]
    }
}

fn clip(grad: &mut [f64], max_norm: Option<f64>) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if let Some(c) = max_norm {
        if norm > c {
            let s = c / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// Stateful driver for the adaptation loop.
#[derive(Clone, Debug)]
pub struct Adapter<M> {
    pub config: AdaptConfig,
    model: M,
    proposal: ProposalModel,
    phi_opt: Adam,
    theta_params: ParamVector,
    theta_opt: Adam,
    iteration: usize,
    root: RngStream,
}

impl<M: StateSpaceModel + Clone> Adapter<M> {
    pub fn new(config: AdaptConfig, model: M, proposal: ProposalModel, rng: RngStream) -> Result<Self> {
        config.validate()?;
        let mut theta_params = ParamVector::new();
        let th = model.theta();
        theta_params.add_slice("theta", &[th.len()])?;
        theta_params.set_values(&th)?;
        Ok(Self {
            phi_opt: Adam::new(config.phi_optimizer, proposal.params().len()),
            theta_opt: Adam::new(config.theta_optimizer, th.len()),
            theta_params,
            config,
            model,
            proposal,
            iteration: 0,
            root: rng,
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn proposal(&self) -> &ProposalModel {
        &self.proposal
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn into_parts(self) -> (M, ProposalModel) {
        (self.model, self.proposal)
    }

    /// Replaces the model (e.g. a new theta proposed by PMMH), keeping the
    /// proposal and optimizer state.
    pub fn set_model(&mut self, model: M) -> Result<()> {
        self.theta_params.set_values(&model.theta())?;
        self.model = model;
        Ok(())
    }

    fn minibatch(&self, data: Option<&Dataset>, base: &RngStream) -> Result<Vec<Sequence>> {
        let m = self.config.minibatch_size;
        match self.config.train_source {
            TrainSource::Generative { seq_len } => (0..m)
                .map(|j| simulate(&self.model, seq_len, &mut base.substream(tags::SIMULATE).substream(j as u64)))
                .collect(),
            TrainSource::Dataset => {
                let ds = data.ok_or_else(|| Error::InvalidArgument("dataset training needs a dataset".into()))?;
                if ds.sequences.is_empty() {
                    return invalid("dataset is empty");
                }
                let total = ds.sequences.len();
                Ok((0..m).map(|j| ds.sequences[(self.iteration * m + j) % total].clone()).collect())
            }
        }
    }

    /// One pass of the loop: minibatch, filter, gradients, optimizer steps.
    pub fn iterate(&mut self, data: Option<&Dataset>) -> Result<IterationDiagnostics> {
        let base = self.root.substream(tags::ADAPT).substream(self.iteration as u64);
        let batch = self.minibatch(data, &base)?;
        let diag = match self.config.mode {
            AdaptMode::Batch => self.batch_update(&batch, &base)?,
            AdaptMode::Online => self.online_update(&batch, &base)?,
        };
        self.iteration += 1;
        Ok(diag)
    }

    pub fn run(&mut self, data: Option<&Dataset>) -> Result<Vec<IterationDiagnostics>> {
        (0..self.config.iterations).map(|_| self.iterate(data)).collect()
    }

    fn batch_update(&mut self, batch: &[Sequence], base: &RngStream) -> Result<IterationDiagnostics> {
        let mut phi = vec![0.0; self.proposal.params().len()];
        let mut theta = vec![0.0; self.theta_params.len()];
        let mut ess_sum = 0.0;
        let mut lml = 0.0;
        let mut steps = 0usize;
        for (j, seq) in batch.iter().enumerate() {
            let rng = base.substream(tags::SMC_RUN).substream(j as u64);
            let est = estimate_gradients(&self.config.smc, &self.model, &self.proposal, &seq.x, self.config.learn_theta, rng)?;
            for (a, b) in phi.iter_mut().zip(&est.phi_grad) {
                *a += b;
            }
            if let Some(g) = &est.theta_grad {
                for (a, b) in theta.iter_mut().zip(g) {
                    *a += b;
                }
            }
            ess_sum += est.ess_trace.iter().sum::<f64>();
            lml += est.lml;
            steps += est.steps;
        }
        let scale = 1.0 / steps.max(1) as f64;
        phi.iter_mut().for_each(|g| *g *= scale);
        theta.iter_mut().for_each(|g| *g *= scale);
        let grad_norm_phi = self.apply_phi(&mut phi)?;
        let grad_norm_theta = if self.config.learn_theta { self.apply_theta(&mut theta)? } else { 0.0 };
        Ok(IterationDiagnostics {
            iteration: self.iteration,
            mean_ess: ess_sum / steps.max(1) as f64,
            lml: lml / batch.len() as f64,
            grad_norm_phi,
            grad_norm_theta,
            lml_approximate: false,
        })
    }

    fn online_update(&mut self, batch: &[Sequence], base: &RngStream) -> Result<IterationDiagnostics> {
        let mut cfg = self.config.smc.clone();
        cfg.record_tapes = true;
        let mut ess_sum = 0.0;
        let mut lml = 0.0;
        let mut steps = 0usize;
        let mut norm_phi = 0.0;
        let mut norm_theta = 0.0;
        for (j, seq) in batch.iter().enumerate() {
            let rng = base.substream(tags::SMC_RUN).substream(j as u64);
            let mut ps = ParticleSystem::new(cfg.clone(), self.model.dim_z(), seq.len(), Some(&self.proposal), rng)?;
            for (t, x) in seq.x.iter().enumerate() {
                ps.step(&self.model, Some(&self.proposal), x)?;
                let weights = ps.step_weights()[t].clone();
                let mut phi = vec![0.0; self.proposal.params().len()];
                if let Some(run) = ps.proposal_run() {
                    run.accumulate_grad(&self.proposal, std::slice::from_ref(&weights), &mut phi, true)?;
                }
                norm_phi = self.apply_phi(&mut phi)?;
                if self.config.learn_theta {
                    let mut theta = vec![0.0; self.theta_params.len()];
                    for (n, &w) in weights.iter().enumerate() {
                        let z_prev = if t > 0 { Some(ps.state_at(t, ps.parent(t + 1, n))) } else { None };
                        let g = self.model.grad_theta_log_joint(t + 1, z_prev, ps.state_at(t + 1, n), x)?;
                        for (a, b) in theta.iter_mut().zip(&g) {
                            *a += w * b;
                        }
                    }
                    norm_theta = self.apply_theta(&mut theta)?;
                }
                if let Some(run) = ps.proposal_run_mut() {
                    run.discard_history();
                }
            }
            ess_sum += ps.ess_trace().iter().sum::<f64>();
            lml += ps.log_marginal_likelihood();
            steps += seq.len();
        }
        Ok(IterationDiagnostics {
            iteration: self.iteration,
            mean_ess: ess_sum / steps.max(1) as f64,
            lml: lml / batch.len() as f64,
            grad_norm_phi: norm_phi,
            grad_norm_theta: norm_theta,
            lml_approximate: true,
        })
    }

    /// Ascent step on phi along `dir`; returns the pre-clip norm.
    fn apply_phi(&mut self, dir: &mut [f64]) -> Result<f64> {
        if dir.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite proposal gradient".into()));
        }
        let norm = clip(dir, self.config.clip_norm);
        if self.proposal.has_parameters() {
            let p = self.proposal.params_mut();
            p.zero_grad();
            p.add_to_grad(dir, -1.0)?;
            self.phi_opt.step(p);
        }
        Ok(norm)
    }

    fn apply_theta(&mut self, dir: &mut [f64]) -> Result<f64> {
        if dir.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite model gradient".into()));
        }
        let norm = clip(dir, self.config.clip_norm);
        self.theta_params.zero_grad();
        self.theta_params.add_to_grad(dir, -1.0)?;
        self.theta_opt.step(&mut self.theta_params);
        // noise scales must stay positive
        let vals: Vec<f64> = self.theta_params.values().iter().map(|v| v.max(1e-6)).collect();
        self.theta_params.set_values(&vals)?;
        self.model = self.model.with_theta(&vals)?;
        Ok(norm)
    }
}

/// Runs every configured iteration and returns the trained proposal, the
/// (possibly updated) model and the diagnostics.
pub fn run_adaptation<M: StateSpaceModel + Clone>(
    config: AdaptConfig,
    model: M,
    proposal: ProposalModel,
    data: Option<&Dataset>,
    rng: RngStream,
) -> Result<(ProposalModel, M, Vec<IterationDiagnostics>)> {
    let mut adapter = Adapter::new(config, model, proposal, rng)?;
    let diags = adapter.run(data)?;
    let (model, proposal) = adapter.into_parts();
    Ok((proposal, model, diags))
}

/// Per-sequence result of a fixed-proposal filter run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub lml: f64,
    pub mean_ess: f64,
    pub rmse: Option<f64>,
}

/// Runs the filter (without adaptation) over each sequence.
pub fn evaluate<M: StateSpaceModel + ?Sized>(
    smc: &SmcConfig,
    model: &M,
    proposal: Option<&ProposalModel>,
    sequences: &[Sequence],
    rng: &RngStream,
) -> Result<Vec<EvalRecord>> {
    let mut cfg = smc.clone();
    cfg.record_tapes = false;
    cfg.record_filtering_stats = true;
    sequences
        .iter()
        .enumerate()
        .map(|(j, seq)| {
            let ps = run_smc(&cfg, model, proposal, &seq.x, rng.substream(j as u64))?;
            let rmse = match &seq.z {
                Some(z) => Some(rmse(z, ps.posterior_means())?),
                None => None,
            };
            Ok(EvalRecord {
                lml: ps.log_marginal_likelihood(),
                mean_ess: ps.mean_ess(),
                rmse,
            })
        })
        .collect()
}
