//! Command-line experiment runner.

mod config;
mod selfcheck;

pub use config::{ConfigError, ExperimentConfig};
pub use selfcheck::{run_checks, CheckResult, Fault};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::adapt::{evaluate, AdaptConfig, AdaptMode, Adapter, EvalRecord, IterationDiagnostics, TrainSource};
use crate::error::Error;
use crate::metrics::{kalman_filter, summarize};
use crate::models::{simulate, BenchmarkNssm, Dataset, GaussianMoments, LinearGaussianSsm, Sequence, StateSpaceModel};
use crate::nnet::AdamConfig;
use crate::pmmh::{pretrained_estimator, run_pmmh, InverseGamma, KalmanEstimator, PmmhChainState, PmmhConfig, SmcEstimator};
use crate::prng::{tags, RngStream};
use crate::proposals::{ProposalModel, ProposalVariant};
use crate::smc::{run_smc, ResampleScheme, ResampleTrigger, SmcConfig};

#[derive(Debug, Parser)]
#[command(name = "nasmc", version, about = "Neural adaptive sequential Monte Carlo experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a proposal and report held-out ESS / LML / RMSE.
    Adapt(RunArgs),
    /// Run the filter with a fixed (checkpointed or prior) proposal.
    Infer(RunArgs),
    /// Particle marginal Metropolis-Hastings over the noise parameters.
    Pmmh(RunArgs),
    /// Run the oracle and invariant checks.
    Selfcheck(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Use the full-scale settings instead of the quick defaults.
    #[arg(long)]
    pub paper_scale: bool,
    /// Per-key overrides, e.g. `--n-particles 500`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    pub overrides: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid configuration: {0}")]
    Invalid(Error),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn invalid_cfg(e: Error) -> CliError {
    CliError::Invalid(e)
}

const MODEL_KEYS: &[(&str, &str)] = &[
    ("model", "benchmark"),
    ("sigma_v", "3.1622776601683795"),
    ("sigma_w", "1"),
    ("init_var", "5"),
    ("a", "0.9"),
    ("c", "1"),
    ("m0", "0"),
    ("p0", "1"),
];

const ADAPT_KEYS: &[(&str, &str)] = &[
    ("variant", "rnn-md-f"),
    ("components", "3"),
    ("hidden", ""),
    ("n_particles", "100"),
    ("iterations", "200"),
    ("seq_len", "200"),
    ("minibatch", "1"),
    ("lr", "0.01"),
    ("mode", "batch"),
    ("resample", "multinomial"),
    ("ess_threshold", ""),
    ("learn_theta", "false"),
    ("theta_lr", "0.001"),
    ("clip", "10"),
    ("train_data", ""),
    ("eval_data", ""),
    ("eval_sequences", "20"),
    ("eval_seq_len", ""),
    ("eval_particles", ""),
    ("checkpoint_every", "0"),
    ("init_checkpoint", ""),
];

const INFER_KEYS: &[(&str, &str)] = &[
    ("checkpoint", ""),
    ("variant", "prior"),
    ("n_particles", "100"),
    ("sequences", "20"),
    ("seq_len", "200"),
    ("data", ""),
    ("resample", "multinomial"),
    ("ess_threshold", ""),
];

const PMMH_KEYS: &[(&str, &str)] = &[
    ("variant", "prior"),
    ("components", "3"),
    ("hidden", ""),
    ("checkpoint", ""),
    ("estimator", "smc"),
    ("n_particles", "100"),
    ("iterations", "500"),
    ("seq_len", "100"),
    ("data", ""),
    ("rw_scale_v", "0.3872983346207417"),
    ("rw_scale_w", "0.28284271247461906"),
    ("prior_a", "0.01"),
    ("prior_b", "0.01"),
    ("theta_init_v", "10"),
    ("theta_init_w", "10"),
    ("readapt_every", "1"),
    ("readapt_iters", "1"),
    ("pretrain_iters", "200"),
    ("adapt_particles", "10"),
    ("lr", "0.01"),
    ("burn_in", "0"),
    ("resample", "multinomial"),
    ("ess_threshold", ""),
];

const SELFCHECK_KEYS: &[(&str, &str)] = &[("inject_fault", "")];

const PAPER_SCALE: &[(&str, &str)] = &[("seq_len", "1000"), ("eval_sequences", "100"), ("pretrain_iters", "500")];

/// Builds the config for `command`: defaults, `--paper-scale`, file, overrides.
pub fn load_config(command: &Command) -> CliResult<ExperimentConfig> {
    let (args, keys): (&RunArgs, &[&[(&str, &str)]]) = match command {
        Command::Adapt(a) => (a, &[MODEL_KEYS, ADAPT_KEYS]),
        Command::Infer(a) => (a, &[MODEL_KEYS, INFER_KEYS]),
        Command::Pmmh(a) => (a, &[MODEL_KEYS, PMMH_KEYS]),
        Command::Selfcheck(a) => (a, &[SELFCHECK_KEYS]),
    };
    let defaults: Vec<(&str, &str)> = keys.iter().flat_map(|k| k.iter().copied()).collect();
    let mut cfg = ExperimentConfig::with_defaults(&defaults);
    if args.paper_scale {
        for (k, v) in PAPER_SCALE {
            if cfg.raw(k).is_some() {
                cfg.set(k, v)?;
            }
        }
    }
    if let Some(path) = &args.config {
        cfg.merge_file(path)?;
    }
    cfg.merge_overrides(&args.overrides)?;
    Ok(cfg)
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = load_config(&cli.command).and_then(|cfg| match &cli.command {
        Command::Adapt(a) => cmd_adapt(&cfg, a.seed, &a.out),
        Command::Infer(a) => cmd_infer(&cfg, a.seed, &a.out),
        Command::Pmmh(a) => cmd_pmmh(&cfg, a.seed, &a.out),
        Command::Selfcheck(a) => cmd_selfcheck(&cfg, a.seed),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Either shipped model, selected by the `model` key.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Benchmark(BenchmarkNssm),
    Lgssm(LinearGaussianSsm),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Benchmark($m) => $e,
            AnyModel::Lgssm($m) => $e,
        }
    };
}

impl StateSpaceModel for AnyModel {
    fn dim_z(&self) -> usize {
        delegate!(self, m => m.dim_z())
    }
    fn dim_x(&self) -> usize {
        delegate!(self, m => m.dim_x())
    }
    fn log_init(&self, z: &[f64]) -> f64 {
        delegate!(self, m => m.log_init(z))
    }
    fn sample_init(&self, rng: &mut RngStream) -> Vec<f64> {
        delegate!(self, m => m.sample_init(rng))
    }
    fn log_trans(&self, t: usize, z_prev: &[f64], z: &[f64]) -> f64 {
        delegate!(self, m => m.log_trans(t, z_prev, z))
    }
    fn sample_trans(&self, t: usize, z_prev: &[f64], rng: &mut RngStream) -> Vec<f64> {
        delegate!(self, m => m.sample_trans(t, z_prev, rng))
    }
    fn log_obs(&self, t: usize, z: &[f64], x: &[f64]) -> f64 {
        delegate!(self, m => m.log_obs(t, z, x))
    }
    fn sample_obs(&self, t: usize, z: &[f64], rng: &mut RngStream) -> Vec<f64> {
        delegate!(self, m => m.sample_obs(t, z, rng))
    }
    fn prior_moments(&self, t: usize, z_prev: Option<&[f64]>) -> Option<GaussianMoments> {
        delegate!(self, m => m.prior_moments(t, z_prev))
    }
    fn theta(&self) -> Vec<f64> {
        delegate!(self, m => m.theta())
    }
    fn theta_names(&self) -> Vec<String> {
        delegate!(self, m => m.theta_names())
    }
    fn with_theta(&self, theta: &[f64]) -> crate::Result<Self> {
        Ok(match self {
            AnyModel::Benchmark(m) => AnyModel::Benchmark(m.with_theta(theta)?),
            AnyModel::Lgssm(m) => AnyModel::Lgssm(m.with_theta(theta)?),
        })
    }
    fn grad_theta_log_joint(&self, t: usize, z_prev: Option<&[f64]>, z: &[f64], x: &[f64]) -> crate::Result<Vec<f64>> {
        delegate!(self, m => m.grad_theta_log_joint(t, z_prev, z, x))
    }
    fn feature_scales(&self) -> (f64, f64) {
        delegate!(self, m => m.feature_scales())
    }
}

fn build_model(cfg: &ExperimentConfig) -> CliResult<AnyModel> {
    let sv: f64 = cfg.get("sigma_v")?;
    let sw: f64 = cfg.get("sigma_w")?;
    match cfg.str("model")? {
        "benchmark" => Ok(AnyModel::Benchmark(
            BenchmarkNssm::with_init_var(sv, sw, cfg.get("init_var")?).map_err(invalid_cfg)?,
        )),
        "lgssm" => Ok(AnyModel::Lgssm(
            LinearGaussianSsm::scalar(cfg.get("a")?, cfg.get("c")?, sv * sv, sw * sw, cfg.get("m0")?, cfg.get("p0")?).map_err(invalid_cfg)?,
        )),
        other => Err(ConfigError::BadValue {
            key: "model".into(),
            value: other.into(),
        }
        .into()),
    }
}

fn smc_config(cfg: &ExperimentConfig, n_particles: usize) -> CliResult<SmcConfig> {
    let mut smc = SmcConfig::new(n_particles);
    smc.scheme = match cfg.str("resample")? {
        "multinomial" => ResampleScheme::Multinomial,
        "systematic" => ResampleScheme::Systematic,
        other => {
            return Err(ConfigError::BadValue {
                key: "resample".into(),
                value: other.into(),
            }
            .into())
        }
    };
    if let Some(f) = cfg.get_opt::<f64>("ess_threshold")? {
        smc.trigger = ResampleTrigger::EssBelow(f);
    }
    smc.validate().map_err(invalid_cfg)?;
    Ok(smc)
}

fn new_proposal(cfg: &ExperimentConfig, model: &AnyModel, seed: u64) -> CliResult<ProposalModel> {
    let variant = ProposalVariant::parse(cfg.str("variant")?, cfg.get("components")?).map_err(invalid_cfg)?;
    let hidden = cfg.get_opt("hidden")?;
    ProposalModel::for_model(variant, model, hidden, &mut RngStream::new(seed, tags::INIT)).map_err(invalid_cfg)
}

fn check_dims(q: &ProposalModel, model: &AnyModel) -> CliResult<()> {
    let (dz, dx) = q.dims();
    if q.has_parameters() && (dz, dx) != (model.dim_z(), model.dim_x()) {
        return Err(CliError::Invalid(Error::InvalidArgument(format!(
            "checkpoint proposal has dimensions ({dz}, {dx}) but the model has ({}, {})",
            model.dim_z(),
            model.dim_x()
        ))));
    }
    Ok(())
}

/// Simulated sequences for stream `purpose`, or the CSV at `path`.
fn sequences(model: &AnyModel, path: Option<&str>, count: usize, len: usize, seed: u64, purpose: u64) -> CliResult<Vec<Sequence>> {
    if let Some(p) = path {
        let ds = Dataset::read_csv_file(Path::new(p))?;
        if ds.sequences.iter().any(|s| s.x.first().map(Vec::len) != Some(model.dim_x())) {
            return Err(CliError::Invalid(Error::InvalidArgument(format!(
                "{p}: observation dimension does not match the model"
            ))));
        }
        return Ok(ds.sequences);
    }
    let root = RngStream::new(seed, purpose).substream(tags::SIMULATE);
    (0..count)
        .map(|j| simulate(model, len, &mut root.substream(j as u64)).map_err(invalid_cfg))
        .collect()
}

fn create_out(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(e.into()))
}

/// Row of the held-out summary table.
fn summary_row(label: &str, n: usize, recs: &[EvalRecord]) -> crate::Result<Vec<String>> {
    let ess = summarize("ess", &recs.iter().map(|r| r.mean_ess).collect::<Vec<_>>())?;
    let lml = summarize("lml", &recs.iter().map(|r| r.lml).collect::<Vec<_>>())?;
    let rmse: Vec<f64> = recs.iter().filter_map(|r| r.rmse).collect();
    let (rm, rs) = match summarize("rmse", &rmse) {
        Ok(s) => (s.mean.to_string(), s.std.to_string()),
        Err(_) => (String::new(), String::new()),
    };
    Ok(vec![
        label.to_string(),
        n.to_string(),
        ess.mean.to_string(),
        ess.std.to_string(),
        lml.mean.to_string(),
        lml.std.to_string(),
        rm,
        rs,
    ])
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "proposal",
    "n_particles",
    "ess_mean",
    "ess_std",
    "lml_mean",
    "lml_std",
    "rmse_mean",
    "rmse_std",
];

pub fn cmd_adapt(cfg: &ExperimentConfig, seed: u64, out: &Path) -> CliResult<()> {
    let model = build_model(cfg)?;
    let proposal = match cfg.raw("init_checkpoint") {
        Some(p) => ProposalModel::load(Path::new(p))?,
        None => new_proposal(cfg, &model, seed)?,
    };
    check_dims(&proposal, &model)?;
    let n: usize = cfg.get("n_particles")?;
    let seq_len: usize = cfg.get("seq_len")?;
    let mut ac = AdaptConfig::new(n, cfg.get("iterations")?);
    ac.smc = smc_config(cfg, n)?;
    ac.minibatch_size = cfg.get("minibatch")?;
    ac.phi_optimizer = AdamConfig {
        lr: cfg.get("lr")?,
        ..AdamConfig::default()
    };
    ac.theta_optimizer = AdamConfig {
        lr: cfg.get("theta_lr")?,
        ..AdamConfig::default()
    };
    ac.learn_theta = cfg.flag("learn_theta")?;
    ac.clip_norm = Some(cfg.get("clip")?).filter(|c: &f64| *c > 0.0);
    ac.mode = match cfg.str("mode")? {
        "batch" => AdaptMode::Batch,
        "online" => AdaptMode::Online,
        other => {
            return Err(ConfigError::BadValue {
                key: "mode".into(),
                value: other.into(),
            }
            .into())
        }
    };
    let train = match cfg.raw("train_data") {
        Some(p) => {
            ac.train_source = TrainSource::Dataset;
            Some(Dataset::read_csv_file(Path::new(p))?)
        }
        None => {
            ac.train_source = TrainSource::Generative { seq_len };
            None
        }
    };
    let checkpoint_every: usize = cfg.get("checkpoint_every")?;
    let eval_len = cfg.get_opt("eval_seq_len")?.unwrap_or(seq_len);
    let eval_n = cfg.get_opt("eval_particles")?.unwrap_or(n);
    let eval_smc = smc_config(cfg, eval_n)?;
    let held_out = sequences(&model, cfg.raw("eval_data"), cfg.get("eval_sequences")?, eval_len, seed, tags::EVAL)?;
    if held_out.is_empty() {
        return Err(CliError::Invalid(Error::InvalidArgument("no held-out sequences".into())));
    }

    create_out(out)?;
    let mut adapter = Adapter::new(ac.clone(), model.clone(), proposal, RngStream::new(seed, 0)).map_err(invalid_cfg)?;
    let mut diag = csv::Writer::from_path(out.join("diagnostics.csv")).map_err(Error::from)?;
    diag.write_record(IterationDiagnostics::CSV_HEADER).map_err(Error::from)?;
    for i in 0..ac.iterations {
        let d = adapter.iterate(train.as_ref())?;
        diag.write_record(d.csv_row()).map_err(Error::from)?;
        if checkpoint_every > 0 && (i + 1) % checkpoint_every == 0 {
            adapter.proposal().save(&out.join(format!("checkpoint_{:06}.ckpt", i + 1)))?;
        }
    }
    diag.flush().map_err(Error::from)?;
    adapter.proposal().save(&out.join("proposal.ckpt"))?;
    if ac.learn_theta {
        let m = adapter.model();
        let text: String = m.theta_names().iter().zip(m.theta()).map(|(k, v)| format!("{k} = {v}\n")).collect();
        fs::write(out.join("theta.txt"), text).map_err(Error::from)?;
    }

    let eval_rng = RngStream::new(seed, tags::EVAL).substream(tags::SMC_RUN);
    let trained = evaluate(&eval_smc, adapter.model(), Some(adapter.proposal()), &held_out, &eval_rng)?;
    let mut summary = csv::Writer::from_path(out.join("summary.csv")).map_err(Error::from)?;
    summary.write_record(SUMMARY_HEADER).map_err(Error::from)?;
    let label = adapter.proposal().variant().to_string();
    summary.write_record(summary_row(&label, eval_n, &trained)?).map_err(Error::from)?;
    if adapter.proposal().has_parameters() {
        let boot = evaluate(&eval_smc, adapter.model(), None, &held_out, &eval_rng)?;
        summary.write_record(summary_row("bootstrap", eval_n, &boot)?).map_err(Error::from)?;
    }
    summary.flush().map_err(Error::from)?;
    Ok(())
}

pub fn cmd_infer(cfg: &ExperimentConfig, seed: u64, out: &Path) -> CliResult<()> {
    let model = build_model(cfg)?;
    let proposal = match cfg.raw("checkpoint") {
        Some(p) => Some(ProposalModel::load(Path::new(p))?),
        None => {
            let v = ProposalVariant::parse(cfg.str("variant")?, 3).map_err(invalid_cfg)?;
            if v != ProposalVariant::PRIOR {
                return Err(CliError::Invalid(Error::InvalidArgument(format!("variant '{v}' needs a checkpoint"))));
            }
            None
        }
    };
    if let Some(q) = &proposal {
        check_dims(q, &model)?;
    }
    let n: usize = cfg.get("n_particles")?;
    let mut smc = smc_config(cfg, n)?;
    smc.record_filtering_stats = true;
    let seqs = sequences(&model, cfg.raw("data"), cfg.get("sequences")?, cfg.get("seq_len")?, seed, tags::EVAL)?;

    create_out(out)?;
    let mut trace = csv::Writer::from_path(out.join("trace.csv")).map_err(Error::from)?;
    let mut runs = csv::Writer::from_path(out.join("runs.csv")).map_err(Error::from)?;
    let exact = matches!(model, AnyModel::Lgssm(_));
    let mut header = vec!["sequence_id", "lml", "mean_ess", "rmse"];
    if exact {
        header.extend(["kalman_lml", "lml_error"]);
    }
    runs.write_record(&header).map_err(Error::from)?;
    let rng = RngStream::new(seed, tags::EVAL).substream(tags::SMC_RUN);
    let mut errors = Vec::new();
    for (j, s) in seqs.iter().enumerate() {
        let ps = run_smc(&smc, &model, proposal.as_ref(), &s.x, rng.substream(j as u64))?;
        ps.write_csv(&mut trace, j, j == 0)?;
        let rmse = match &s.z {
            Some(z) => crate::metrics::rmse(z, ps.posterior_means())?.to_string(),
            None => String::new(),
        };
        let lml = ps.log_marginal_likelihood();
        let mut row = vec![j.to_string(), lml.to_string(), ps.mean_ess().to_string(), rmse];
        if let AnyModel::Lgssm(m) = &model {
            let k = kalman_filter(m, &s.x)?.log_marginal_likelihood;
            errors.push(lml - k);
            row.extend([k.to_string(), (lml - k).to_string()]);
        }
        runs.write_record(&row).map_err(Error::from)?;
    }
    trace.flush().map_err(Error::from)?;
    runs.flush().map_err(Error::from)?;
    if !errors.is_empty() {
        let s = summarize("lml_error", &errors)?;
        println!("lml error vs exact: mean {:.4} std {:.4} over {} sequences", s.mean, s.std, s.count);
    }
    Ok(())
}

pub fn cmd_pmmh(cfg: &ExperimentConfig, seed: u64, out: &Path) -> CliResult<()> {
    let truth = build_model(cfg)?;
    let ig = InverseGamma::new(cfg.get("prior_a")?, cfg.get("prior_b")?).map_err(invalid_cfg)?;
    let n: usize = cfg.get("n_particles")?;
    let pc = PmmhConfig {
        iterations: cfg.get("iterations")?,
        n_particles: n,
        rw_scale: vec![cfg.get("rw_scale_v")?, cfg.get("rw_scale_w")?],
        prior: vec![ig, ig],
        theta_init: vec![cfg.get("theta_init_v")?, cfg.get("theta_init_w")?],
        readapt_every: cfg.get("readapt_every")?,
        readapt_iters: cfg.get("readapt_iters")?,
        pretrain_iters: cfg.get("pretrain_iters")?,
    };
    pc.validate(truth.theta().len()).map_err(invalid_cfg)?;
    let seq_len: usize = cfg.get("seq_len")?;
    let data = Dataset::new(sequences(&truth, cfg.raw("data"), 1, seq_len, seed, tags::PMMH_SMC)?)?;
    let smc = smc_config(cfg, n)?;
    let rng = RngStream::new(seed, 0);
    let names = truth.theta_names();
    let burn_in: usize = cfg.get("burn_in")?;

    let state: PmmhChainState = match cfg.str("estimator")? {
        "kalman" => {
            let AnyModel::Lgssm(m) = &truth else {
                return Err(CliError::Invalid(Error::InvalidArgument("estimator = kalman needs model = lgssm".into())));
            };
            run_pmmh(&pc, m, &mut KalmanEstimator, &data, &rng)?
        }
        "smc" => {
            let fixed = match cfg.raw("checkpoint") {
                Some(p) => Some(ProposalModel::load(Path::new(p))?),
                None => None,
            };
            let variant = ProposalVariant::parse(cfg.str("variant")?, cfg.get("components")?).map_err(invalid_cfg)?;
            let mut est = if variant == ProposalVariant::PRIOR && fixed.is_none() {
                SmcEstimator::Bootstrap { smc }
            } else {
                let q = match fixed {
                    Some(q) => q,
                    None => new_proposal(cfg, &truth, seed)?,
                };
                check_dims(&q, &truth)?;
                let an: usize = cfg.get("adapt_particles")?;
                let mut ac = AdaptConfig::new(an, 0);
                ac.smc = smc_config(cfg, an)?;
                ac.phi_optimizer = AdamConfig {
                    lr: cfg.get("lr")?,
                    ..AdamConfig::default()
                };
                let adapter = Adapter::new(ac, truth.clone(), q, RngStream::new(seed, tags::ADAPT)).map_err(invalid_cfg)?;
                let mut est = pretrained_estimator(&pc, &truth, adapter, seq_len)?;
                if let SmcEstimator::Adaptive { smc: s, .. } = &mut est {
                    *s = smc;
                }
                est
            };
            run_pmmh(&pc, &truth, &mut est, &data, &rng)?
        }
        other => {
            return Err(ConfigError::BadValue {
                key: "estimator".into(),
                value: other.into(),
            }
            .into())
        }
    };

    create_out(out)?;
    state.write_trace_csv(fs::File::create(out.join("trace.csv")).map_err(Error::from)?, &names)?;
    fs::write(out.join("summary.txt"), state.summary_text(&names, burn_in.min(state.trace.len()))).map_err(Error::from)?;
    Ok(())
}

pub fn cmd_selfcheck(cfg: &ExperimentConfig, seed: u64) -> CliResult<()> {
    let fault = match cfg.raw("inject_fault") {
        None => None,
        Some(name) => Some(name.parse::<Fault>().map_err(|_| ConfigError::BadValue {
            key: "inject_fault".into(),
            value: name.into(),
        })?),
    };
    let results = run_checks(seed, fault);
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for r in &results {
        let _ = writeln!(lock, "{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let _ = writeln!(lock, "{} checks, {} failed", results.len(), failed);
    if failed > 0 {
        return Err(CliError::Runtime(Error::State(format!("{failed} self-check(s) failed"))));
    }
    Ok(())
}
