//! Sequential importance resampling with ancestry tracking.
//!
//! At step `t` the filter (1) optionally resamples the step-`t-1` particles,
//! (2) draws `z_t^n` from the proposal given the particle's ancestral
//! history, (3) forms the incremental weight
//! `log p(z_t|z_{t-1}) + log p(x_t|z_t) - log q(z_t|...)` and (4) normalizes
//! in log space. The log of the weighted mean incremental weight is the
//! step's contribution to the marginal-likelihood estimate.
//!
//! Randomness: proposal draws for particle `n` at step `t` come from
//! `root/PROPOSE/t/n` and resampling at step `t` from `root/RESAMPLE/t`.

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::models::StateSpaceModel;
use crate::nnet::activations::logsumexp;
use crate::prng::{tags, RngStream};
use crate::proposals::{ProposalModel, ProposalRun};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleScheme {
    Multinomial,
    Systematic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResampleTrigger {
    Always,
    /// Resample when `ESS < fraction * N`.
    EssBelow(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmcConfig {
    pub n_particles: usize,
    pub scheme: ResampleScheme,
    pub trigger: ResampleTrigger,
    pub record_filtering_stats: bool,
    /// Keep proposal forward values for gradient accumulation.
    pub record_tapes: bool,
}

impl SmcConfig {
    pub fn new(n_particles: usize) -> Self {
        Self {
            n_particles,
            scheme: ResampleScheme::Multinomial,
            trigger: ResampleTrigger::Always,
            record_filtering_stats: true,
            record_tapes: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return invalid("need at least one particle");
        }
        if let ResampleTrigger::EssBelow(f) = self.trigger {
            if !(f > 0.0 && f <= 1.0) {
                return invalid(format!("ESS resampling fraction must lie in (0, 1], got {f}"));
            }
        }
        Ok(())
    }
}

/// `1 / sum_n w_n^2` for normalized weights.
pub fn ess(norm_w: &[f64]) -> f64 {
    1.0 / norm_w.iter().map(|w| w * w).sum::<f64>()
}

/// Ancestor indices drawn from normalized weights.
pub fn resample_indices(norm_w: &[f64], scheme: ResampleScheme, rng: &mut RngStream) -> Vec<usize> {
    let n = norm_w.len();
    let mut cumsum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in norm_w {
        acc += w;
        cumsum.push(acc);
    }
    let total = acc;
    let last_positive = norm_w.iter().rposition(|&w| w > 0.0).unwrap_or(n - 1);
    let find = |u: f64| -> usize {
        let i = cumsum.partition_point(|&c| c <= u);
        i.min(last_positive)
    };
    match scheme {
        ResampleScheme::Multinomial => (0..n).map(|_| find(rng.uniform01() * total)).collect(),
        ResampleScheme::Systematic => {
            let u0 = rng.uniform01();
            (0..n).map(|i| find((i as f64 + u0) / n as f64 * total)).collect()
        }
    }
}

/// The filter's working set plus the per-step record of a run.
#[derive(Clone, Debug)]
pub struct ParticleSystem {
    config: SmcConfig,
    n: usize,
    dim_z: usize,
    seq_len: usize,
    t: usize,
    root: RngStream,
    /// Current particle states, `N x D_z` row-major.
    states: Vec<f64>,
    log_w: Vec<f64>,
    norm_w: Vec<f64>,
    run: Option<ProposalRun>,
    /// Per completed step (index `t - 1`).
    step_states: Vec<Vec<f64>>,
    step_weights: Vec<Vec<f64>>,
    step_ancestors: Vec<Vec<usize>>,
    step_resampled: Vec<bool>,
    step_ess: Vec<f64>,
    step_log_norm: Vec<f64>,
    step_mean: Vec<Vec<f64>>,
}

impl ParticleSystem {
    /// Fresh system for a sequence of `seq_len` steps. `proposal = None`
    /// selects the built-in bootstrap path.
    pub fn new(config: SmcConfig, dim_z: usize, seq_len: usize, proposal: Option<&ProposalModel>, rng: RngStream) -> Result<Self> {
        config.validate()?;
        let n = config.n_particles;
        let run = proposal.map(|p| p.begin_sequence(n, seq_len, config.record_tapes));
        Ok(Self {
            n,
            dim_z,
            seq_len,
            t: 0,
            root: rng,
            states: Vec::new(),
            log_w: vec![-(n as f64).ln(); n],
            norm_w: vec![1.0 / n as f64; n],
            run,
            step_states: Vec::new(),
            step_weights: Vec::new(),
            step_ancestors: Vec::new(),
            step_resampled: Vec::new(),
            step_ess: Vec::new(),
            step_log_norm: Vec::new(),
            step_mean: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &SmcConfig {
        &self.config
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    /// Number of completed steps.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn dim_z(&self) -> usize {
        self.dim_z
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.dim_z..(n + 1) * self.dim_z]
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_w
    }

    pub fn normalized_weights(&self) -> &[f64] {
        &self.norm_w
    }

    pub fn ess(&self) -> f64 {
        ess(&self.norm_w)
    }

    pub fn proposal_run(&self) -> Option<&ProposalRun> {
        self.run.as_ref()
    }

    pub fn proposal_run_mut(&mut self) -> Option<&mut ProposalRun> {
        self.run.as_mut()
    }

    /// Filtering weights `w~_t` per completed step.
    pub fn step_weights(&self) -> &[Vec<f64>] {
        &self.step_weights
    }

    /// Particle states `z_t^n` per completed step (`N x D_z` row-major).
    pub fn step_states(&self) -> &[Vec<f64>] {
        &self.step_states
    }

    /// `a_t^n`: index of the step-`t-1` particle that particle `n` at step
    /// `t` descends from (identity at `t = 1` and when not resampling).
    pub fn step_ancestors(&self) -> &[Vec<usize>] {
        &self.step_ancestors
    }

    pub fn step_resampled(&self) -> &[bool] {
        &self.step_resampled
    }

    pub fn ess_trace(&self) -> &[f64] {
        &self.step_ess
    }

    pub fn log_normalizers(&self) -> &[f64] {
        &self.step_log_norm
    }

    pub fn posterior_means(&self) -> &[Vec<f64>] {
        &self.step_mean
    }

    /// State of particle `n` at completed step `t` (1-based).
    pub fn state_at(&self, t: usize, n: usize) -> &[f64] {
        &self.step_states[t - 1][n * self.dim_z..(n + 1) * self.dim_z]
    }

    /// Index of the step-`t-1` particle on the path of particle `n` at step `t`.
    pub fn parent(&self, t: usize, n: usize) -> usize {
        self.step_ancestors[t - 1][n]
    }

    /// Reconstructs `z_{1:t}` along the ancestry of particle `n` at step `t`.
    pub fn trajectory(&self, t: usize, n: usize) -> Vec<Vec<f64>> {
        let mut path = vec![Vec::new(); t];
        let mut idx = n;
        for s in (1..=t).rev() {
            path[s - 1] = self.state_at(s, idx).to_vec();
            idx = self.parent(s, idx);
        }
        path
    }

    /// Draws ancestors from the current normalized weights, copies particle
    /// and recurrent states, and resets the weights to uniform.
    pub fn resample(&mut self, scheme: ResampleScheme, rng: &mut RngStream) -> Vec<usize> {
        let ancestors = resample_indices(&self.norm_w, scheme, rng);
        let d = self.dim_z;
        let old = std::mem::take(&mut self.states);
        self.states = ancestors.iter().flat_map(|&a| old[a * d..(a + 1) * d].iter().copied()).collect();
        if let Some(run) = self.run.as_mut() {
            run.reindex(&ancestors);
        }
        self.log_w = vec![-(self.n as f64).ln(); self.n];
        self.norm_w = vec![1.0 / self.n as f64; self.n];
        ancestors
    }

    fn should_resample(&self) -> bool {
        match self.config.trigger {
            ResampleTrigger::Always => true,
            ResampleTrigger::EssBelow(f) => self.ess() < f * self.n as f64,
        }
    }

    /// Advances the filter by one observation. `proposal` must be the model
    /// the system was created with (or `None` for the bootstrap path); it may
    /// have been updated in place between steps.
    pub fn step<M: StateSpaceModel + ?Sized>(&mut self, model: &M, proposal: Option<&ProposalModel>, x_t: &[f64]) -> Result<()> {
        if proposal.is_some() != self.run.is_some() {
            return Err(Error::State("proposal does not match the one the filter was started with".into()));
        }
        if x_t.len() != model.dim_x() {
            return invalid(format!("observation has dimension {}, model expects {}", x_t.len(), model.dim_x()));
        }
        let t = self.t + 1;
        let n = self.n;
        let d = self.dim_z;

        let (ancestors, resampled) = if t > 1 && self.should_resample() {
            let mut rng = self.root.substream(tags::RESAMPLE).substream(t as u64);
            (self.resample(self.config.scheme, &mut rng), true)
        } else {
            ((0..n).collect(), false)
        };
        // states were already copied by resample(); prev_states[n] is the parent
        let prev_states = std::mem::take(&mut self.states);
        let prev_logw: Vec<f64> = self.norm_w.iter().map(|w| w.ln()).collect();

        let propose_root = self.root.substream(tags::PROPOSE).substream(t as u64);
        let mut states = vec![0.0; n * d];
        let mut log_w = vec![0.0; n];
        for i in 0..n {
            let mut rng = propose_root.substream(i as u64);
            let z_prev = if t > 1 { Some(&prev_states[i * d..(i + 1) * d]) } else { None };
            let (z, log_alpha) = match (proposal, self.run.as_mut()) {
                (Some(q), Some(run)) => {
                    let prior = model.prior_moments(t, z_prev);
                    let mdn = run.condition(q, i, t, x_t, z_prev, prior.as_ref())?;
                    let z = mdn.sample(&mut rng);
                    let lq = run.log_density_and_grad(q, i, &z)?;
                    let lp = match z_prev {
                        None => model.log_init(&z),
                        Some(zp) => model.log_trans(t, zp, &z),
                    };
                    let a = lp + model.log_obs(t, &z, x_t) - lq;
                    (z, a)
                }
                _ => {
                    let z = match z_prev {
                        None => model.sample_init(&mut rng),
                        Some(zp) => model.sample_trans(t, zp, &mut rng),
                    };
                    let a = model.log_obs(t, &z, x_t);
                    (z, a)
                }
            };
            states[i * d..(i + 1) * d].copy_from_slice(&z);
            log_w[i] = prev_logw[i] + if log_alpha.is_nan() { f64::NEG_INFINITY } else { log_alpha };
        }
        if let Some(run) = self.run.as_mut() {
            run.end_step()?;
        }

        let log_norm = logsumexp(&log_w);
        if !log_norm.is_finite() {
            return Err(Error::DegenerateWeights { t });
        }
        let norm_w: Vec<f64> = log_w.iter().map(|l| (l - log_norm).exp()).collect();

        self.t = t;
        self.states = states;
        self.log_w = log_w;
        self.norm_w = norm_w;

        self.step_ess.push(ess(&self.norm_w));
        self.step_log_norm.push(log_norm);
        if self.config.record_filtering_stats {
            let mut mean = vec![0.0; d];
            for (i, w) in self.norm_w.iter().enumerate() {
                for (j, m) in mean.iter_mut().enumerate() {
                    *m += w * self.states[i * d + j];
                }
            }
            self.step_mean.push(mean);
        }
        self.step_states.push(self.states.clone());
        self.step_weights.push(self.norm_w.clone());
        self.step_ancestors.push(ancestors);
        self.step_resampled.push(resampled);
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// `sum_t log sum_n w~_{t-1}^n alpha_t^n`, i.e. the sum of per-step log
    /// average incremental weights when resampling every step.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.step_log_norm.iter().sum()
    }

    pub fn mean_ess(&self) -> f64 {
        if self.step_ess.is_empty() {
            return f64::NAN;
        }
        self.step_ess.iter().sum::<f64>() / self.step_ess.len() as f64
    }

    /// Writes `sequence_id,t,ess,log_incremental_normalizer,posterior_mean_*`.
    pub fn write_csv<W: Write>(&self, out: &mut csv::Writer<W>, sequence_id: usize, header: bool) -> Result<()> {
        if header {
            let mut h = vec!["sequence_id".to_string(), "t".into(), "ess".into(), "log_incremental_normalizer".into()];
            h.extend((0..self.dim_z).map(|j| format!("posterior_mean_{j}")));
            out.write_record(&h)?;
        }
        for t in 0..self.t {
            let mut row = vec![
                sequence_id.to_string(),
                (t + 1).to_string(),
                self.step_ess[t].to_string(),
                self.step_log_norm[t].to_string(),
            ];
            if let Some(m) = self.step_mean.get(t) {
                row.extend(m.iter().map(|v| v.to_string()));
            }
            out.write_record(&row)?;
        }
        Ok(())
    }
}

/// Runs the filter over a whole observation sequence.
pub fn run_smc<M: StateSpaceModel + ?Sized>(
    config: &SmcConfig,
    model: &M,
    proposal: Option<&ProposalModel>,
    xs: &[Vec<f64>],
    rng: RngStream,
) -> Result<ParticleSystem> {
    let mut ps = ParticleSystem::new(config.clone(), model.dim_z(), xs.len(), proposal, rng)?;
    for x in xs {
        ps.step(model, proposal, x)?;
    }
    Ok(ps)
}

/// `z_bar_t = sum_n w~_t^n z_t^n` for every completed step.
pub fn filtering_posterior_mean(ps: &ParticleSystem) -> Result<Vec<Vec<f64>>> {
    if !ps.config.record_filtering_stats {
        return Err(Error::State("filtering statistics were not recorded".into()));
    }
    Ok(ps.step_mean.clone())
}

pub fn log_marginal_likelihood(ps: &ParticleSystem) -> f64 {
    ps.log_marginal_likelihood()
}
