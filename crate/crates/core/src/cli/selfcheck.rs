//! Oracle and invariant checks runnable from the binary.

use std::fmt;
use std::str::FromStr;

use crate::adapt::accumulate_phi_grad;
use crate::error::Error;
use crate::metrics::kalman_filter;
use crate::models::{simulate, BenchmarkNssm, LinearGaussianSsm, StateSpaceModel};
use crate::nnet::gradcheck::{finite_difference, relative_error, FD_RTOL, FD_STEP};
use crate::nnet::{Dense, Lstm, LstmState, MdnParams, ParamVector};
use crate::prng::RngStream;
use crate::proposals::{ProposalModel, ProposalVariant};
use crate::smc::{resample_indices, run_smc, ResampleScheme, SmcConfig};

/// Deliberate corruption used to confirm that a check can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Perturbs every analytic gradient before comparison.
    Gradient,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "gradient" => Ok(Fault::Gradient),
            _ => Err(Error::InvalidArgument(format!("unknown fault '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {} ({})", self.name, self.detail)
    }
}

fn check(name: &'static str, outcome: crate::Result<(bool, String)>) -> CheckResult {
    match outcome {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn corrupt(grad: &mut [f64], fault: Option<Fault>) {
    if fault == Some(Fault::Gradient) {
        grad.iter_mut().for_each(|g| *g += 0.01 * (1.0 + g.abs()));
    }
}

fn compare(analytic: &[f64], numeric: &[f64]) -> (bool, String) {
    let err = relative_error(analytic, numeric);
    (err < FD_RTOL, format!("relative error {err:.2e}"))
}

fn randn(rng: &mut RngStream, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| s * rng.std_normal()).collect()
}

fn grad_mdn(seed: u64, fault: Option<Fault>) -> crate::Result<(bool, String)> {
    let mut rng = RngStream::new(seed, 101);
    let (k, d) = (3, 2);
    let flat = randn(&mut rng, k + 2 * k * d, 0.7);
    let z = randn(&mut rng, d, 1.0);
    let build = |p: &[f64]| MdnParams::new(p[..k].to_vec(), p[k..k + k * d].to_vec(), p[k + k * d..].to_vec());
    let (_, g) = build(&flat)?.log_density_grad(&z);
    let mut analytic = [g.d_logits, g.d_means, g.d_log_stds].concat();
    corrupt(&mut analytic, fault);
    let numeric = finite_difference(|p| build(p).map(|m| m.log_density(&z)).unwrap_or(f64::NAN), &flat, FD_STEP);
    Ok(compare(&analytic, &numeric))
}

fn grad_dense(seed: u64, fault: Option<Fault>) -> crate::Result<(bool, String)> {
    let mut rng = RngStream::new(seed, 102);
    let mut params = ParamVector::new();
    let layer = Dense::new(&mut params, "l", 5, 3)?;
    layer.init(params.values_mut(), &mut rng);
    let x = randn(&mut rng, 5, 1.0);
    let r = randn(&mut rng, 3, 1.0);
    let mut analytic = vec![0.0; params.len()];
    layer.backward(params.values(), &x, &r, &mut analytic, None);
    corrupt(&mut analytic, fault);
    let numeric = finite_difference(
        |p| {
            layer
                .forward(p, &x)
                .map(|y| y.iter().zip(&r).map(|(a, b)| a * b).sum())
                .unwrap_or(f64::NAN)
        },
        params.values(),
        FD_STEP,
    );
    Ok(compare(&analytic, &numeric))
}

fn grad_lstm(seed: u64, fault: Option<Fault>) -> crate::Result<(bool, String)> {
    let (n_in, hd) = (2, 3);
    let mut rng = RngStream::new(seed, 103);
    let mut params = ParamVector::new();
    let lstm = Lstm::new(&mut params, "lstm", n_in, hd)?;
    lstm.init(params.values_mut(), &mut rng);
    let xs: Vec<Vec<f64>> = (0..5).map(|_| randn(&mut rng, n_in, 1.0)).collect();
    let r = randn(&mut rng, hd, 1.0);
    let loss = |p: &[f64]| {
        let mut st = LstmState::zeros(hd);
        for x in &xs {
            st = lstm.step_unchecked(p, &st, x).0;
        }
        st.h.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut caches = Vec::new();
    let mut st = LstmState::zeros(hd);
    for x in &xs {
        let (next, c) = lstm.step(params.values(), &st, x)?;
        caches.push(c);
        st = next;
    }
    let mut analytic = vec![0.0; params.len()];
    let mut dh = r.clone();
    let mut dc = vec![0.0; hd];
    let (mut dhp, mut dcp) = (vec![0.0; hd], vec![0.0; hd]);
    for c in caches.iter().rev() {
        lstm.backward(params.values(), c, &dh, &dc, &mut analytic, &mut dhp, &mut dcp, None);
        dh.copy_from_slice(&dhp);
        dc.copy_from_slice(&dcp);
    }
    corrupt(&mut analytic, fault);
    let numeric = finite_difference(loss, params.values(), FD_STEP);
    Ok(compare(&analytic, &numeric))
}

fn path_log_q(q: &ProposalModel, model: &BenchmarkNssm, xs: &[Vec<f64>], zs: &[Vec<f64>], only_last: bool) -> crate::Result<f64> {
    let mut run = q.begin_sequence(1, xs.len(), false);
    let mut total = 0.0;
    for s in 1..=zs.len() {
        let z_prev = if s > 1 { Some(zs[s - 2].as_slice()) } else { None };
        let prior = model.prior_moments(s, z_prev);
        run.condition(q, 0, s, &xs[s - 1], z_prev, prior.as_ref())?;
        let lq = run.log_density_and_grad(q, 0, &zs[s - 1])?;
        run.end_step()?;
        if !only_last || s == zs.len() {
            total += lq;
        }
    }
    Ok(total)
}

fn perturbed_proposal(seed: u64, model: &BenchmarkNssm) -> crate::Result<ProposalModel> {
    let v = ProposalVariant::parse("rnn-md-f", 3)?;
    let mut q = ProposalModel::for_model(v, model, Some(4), &mut RngStream::new(seed, 104))?;
    let mut rng = RngStream::new(seed, 105);
    let p: Vec<f64> = q.params().values().iter().map(|v| v + 0.1 * rng.std_normal()).collect();
    q.params_mut().set_values(&p)?;
    Ok(q)
}

fn with_params(q: &ProposalModel, p: &[f64]) -> ProposalModel {
    let mut q = q.clone();
    q.params_mut().set_values(p).expect("same length");
    q
}

fn grad_proposal(seed: u64, fault: Option<Fault>) -> crate::Result<(bool, String)> {
    let model = BenchmarkNssm::paper();
    let seq = simulate(&model, 3, &mut RngStream::new(seed, 106))?;
    let zs = seq.z.clone().unwrap_or_default();
    let q = perturbed_proposal(seed, &model)?;
    let mut run = q.begin_sequence(1, 3, true);
    for s in 1..=3 {
        let z_prev = if s > 1 { Some(zs[s - 2].as_slice()) } else { None };
        let prior = model.prior_moments(s, z_prev);
        run.condition(&q, 0, s, &seq.x[s - 1], z_prev, prior.as_ref())?;
        run.log_density_and_grad(&q, 0, &zs[s - 1])?;
        run.end_step()?;
    }
    let mut analytic = vec![0.0; q.params().len()];
    run.accumulate_grad(&q, &[vec![1.0], vec![1.0], vec![1.0]], &mut analytic, false)?;
    corrupt(&mut analytic, fault);
    let numeric = finite_difference(
        |p| path_log_q(&with_params(&q, p), &model, &seq.x, &zs, false).unwrap_or(f64::NAN),
        q.params().values(),
        FD_STEP,
    );
    Ok(compare(&analytic, &numeric))
}

fn grad_accumulator(seed: u64, fault: Option<Fault>) -> crate::Result<(bool, String)> {
    let model = BenchmarkNssm::paper();
    let seq = simulate(&model, 2, &mut RngStream::new(seed, 107))?;
    let q = perturbed_proposal(seed, &model)?;
    let mut cfg = SmcConfig::new(3);
    cfg.record_tapes = true;
    let ps = run_smc(&cfg, &model, Some(&q), &seq.x, RngStream::new(seed, 108))?;
    let mut analytic = vec![0.0; q.params().len()];
    accumulate_phi_grad(&ps, &q, &mut analytic)?;
    corrupt(&mut analytic, fault);
    let objective = |p: &[f64]| {
        let qp = with_params(&q, p);
        let mut total = 0.0;
        for t in 1..=2 {
            for n in 0..3 {
                let path = ps.trajectory(t, n);
                total += ps.step_weights()[t - 1][n] * path_log_q(&qp, &model, &seq.x, &path, true).unwrap_or(f64::NAN);
            }
        }
        total
    };
    let numeric = finite_difference(objective, q.params().values(), FD_STEP);
    Ok(compare(&analytic, &numeric))
}

fn lgssm() -> crate::Result<LinearGaussianSsm> {
    LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 1.0, 0.0, 1.0)
}

fn kalman_close(seed: u64) -> crate::Result<(bool, String)> {
    let m = lgssm()?;
    let mut sq = 0.0;
    for j in 0..20 {
        let seq = simulate(&m, 20, &mut RngStream::new(seed, 109).substream(j))?;
        let exact = kalman_filter(&m, &seq.x)?.log_marginal_likelihood;
        let est = run_smc(&SmcConfig::new(500), &m, None, &seq.x, RngStream::new(seed, 110).substream(j))?.log_marginal_likelihood();
        sq += (est - exact).powi(2);
    }
    let rms = (sq / 20.0).sqrt();
    Ok((rms < 0.5, format!("rms error {rms:.3} nats over 20 sequences")))
}

fn kalman_unbiased(seed: u64) -> crate::Result<(bool, String)> {
    let m = lgssm()?;
    let seq = simulate(&m, 20, &mut RngStream::new(seed, 111))?;
    let exact = kalman_filter(&m, &seq.x)?.log_marginal_likelihood;
    let reps = 1000;
    let ratios: Vec<f64> = (0..reps)
        .map(|r| {
            run_smc(&SmcConfig::new(100), &m, None, &seq.x, RngStream::new(seed, 112).substream(r))
                .map(|ps| (ps.log_marginal_likelihood() - exact).exp())
        })
        .collect::<crate::Result<_>>()?;
    let mean = ratios.iter().sum::<f64>() / reps as f64;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    Ok(((mean - 1.0).abs() < 3.0 * se, format!("mean ratio {mean:.4}, se {se:.4}")))
}

fn resampling_moments(seed: u64, scheme: ResampleScheme) -> crate::Result<(bool, String)> {
    let w = [0.05, 0.4, 0.15, 0.3, 0.1];
    let reps = 4000;
    let mut counts = [0.0; 5];
    for r in 0..reps {
        for a in resample_indices(&w, scheme, &mut RngStream::new(seed, 113).substream(r)) {
            counts[a] += 1.0;
        }
    }
    let n = w.len() as f64;
    let mut worst: f64 = 0.0;
    for (c, wi) in counts.iter().zip(&w) {
        let mean = c / reps as f64;
        // multinomial offspring variance bounds the systematic one
        let se = (n * wi * (1.0 - wi) / reps as f64).sqrt();
        worst = worst.max((mean - n * wi).abs() / se);
    }
    Ok((worst < 4.0, format!("max offspring deviation {worst:.2} se")))
}

fn ancestry(seed: u64) -> crate::Result<(bool, String)> {
    let m = BenchmarkNssm::paper();
    let seq = simulate(&m, 15, &mut RngStream::new(seed, 114))?;
    let ps = run_smc(&SmcConfig::new(20), &m, None, &seq.x, RngStream::new(seed, 115))?;
    for t in 2..=15 {
        for n in 0..20 {
            let path = ps.trajectory(t, n);
            let parent_path = ps.trajectory(t - 1, ps.parent(t, n));
            if path[..t - 1] != parent_path[..] || path[t - 1] != ps.state_at(t, n) {
                return Ok((false, format!("path of particle {n} at step {t} disagrees with its parent")));
            }
        }
    }
    Ok((true, "15 steps x 20 particles".into()))
}

fn prior_equivalence(seed: u64) -> crate::Result<(bool, String)> {
    let m = BenchmarkNssm::paper();
    let seq = simulate(&m, 30, &mut RngStream::new(seed, 116))?;
    let q = ProposalModel::prior();
    let a = run_smc(&SmcConfig::new(50), &m, None, &seq.x, RngStream::new(seed, 117))?.log_marginal_likelihood();
    let b = run_smc(&SmcConfig::new(50), &m, Some(&q), &seq.x, RngStream::new(seed, 117))?.log_marginal_likelihood();
    Ok(((a - b).abs() < 1e-12, format!("difference {:.1e}", (a - b).abs())))
}

fn checkpoint_roundtrip(seed: u64) -> crate::Result<(bool, String)> {
    let m = BenchmarkNssm::paper();
    let q = perturbed_proposal(seed, &m)?;
    let back = ProposalModel::from_checkpoint_str(&q.to_checkpoint_string())?;
    let same = back
        .params()
        .values()
        .iter()
        .zip(q.params().values())
        .all(|(a, b)| a.to_bits() == b.to_bits())
        && back.variant() == q.variant();
    Ok((same, format!("{} parameters", q.params().len())))
}

/// Runs every check with randomness derived from `seed`.
pub fn run_checks(seed: u64, fault: Option<Fault>) -> Vec<CheckResult> {
    vec![
        check("gradient.mdn", grad_mdn(seed, fault)),
        check("gradient.dense", grad_dense(seed, fault)),
        check("gradient.lstm_chain", grad_lstm(seed, fault)),
        check("gradient.proposal_path", grad_proposal(seed, fault)),
        check("gradient.weighted_accumulator", grad_accumulator(seed, fault)),
        check("kalman.lml_rms_within_half_nat", kalman_close(seed)),
        check("kalman.unbiased_evidence", kalman_unbiased(seed)),
        check("resampling.multinomial_moments", resampling_moments(seed, ResampleScheme::Multinomial)),
        check("resampling.systematic_moments", resampling_moments(seed, ResampleScheme::Systematic)),
        check("ancestry.consistency", ancestry(seed)),
        check("proposal.prior_matches_bootstrap", prior_equivalence(seed)),
        check("checkpoint.roundtrip", checkpoint_roundtrip(seed)),
    ]
}
