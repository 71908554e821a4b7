//! Parametric proposals `q_phi(z_t | z_{1:t-1}, x_{1:t})`.
//!
//! Three families share one interface: `prior` (the model's own transition,
//! i.e. the bootstrap proposal), `nn` (a one-hidden-layer tanh network) and
//! `rnn` (an LSTM whose state follows each particle's ancestry). The network
//! families end in either a diagonal Gaussian head or a `K`-component
//! mixture head. With the residual flag the head describes the process noise
//! in units of the prior standard deviation, so the proposal mean is
//! `prior_mean + prior_std * mu`.
//!
//! Network input at step `t` of a length-`T` sequence:
//! `[x_t / sx, z_{t-1} / sz, cos(1.2t), sin(1.2t), t/T, [t == 1]]`, plus
//! `prior_mean / sz` for residual variants. `z_{t-1}` is zero at `t = 1`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::models::GaussianMoments;
use crate::nnet::activations::{sigmoid, softplus, softplus_inv};
use crate::nnet::{checkpoint, Dense, Lstm, LstmCache, LstmState, MdnParams, ParamVector, Tape, SIGMA_FLOOR};
use crate::prng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Prior,
    Nn,
    Rnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Gauss,
    Md(usize),
}

impl Head {
    pub fn components(&self) -> usize {
        match self {
            Head::Gauss => 1,
            Head::Md(k) => *k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProposalVariant {
    pub family: Family,
    pub head: Head,
    pub residual_f: bool,
}

impl ProposalVariant {
    pub const PRIOR: ProposalVariant = ProposalVariant {
        family: Family::Prior,
        head: Head::Gauss,
        residual_f: false,
    };

    pub fn new(family: Family, head: Head, residual_f: bool) -> Result<Self> {
        if let Head::Md(0) = head {
            return invalid("mixture head needs at least one component");
        }
        if family == Family::Prior && (residual_f || head != Head::Gauss) {
            return invalid("the prior family has no head or residual options");
        }
        Ok(Self { family, head, residual_f })
    }

    /// Parses names such as `prior`, `nn`, `nn-md`, `rnn-f`, `rnn-md-f`.
    /// `components` is the mixture size used for `-md` variants.
    pub fn parse(name: &str, components: usize) -> Result<Self> {
        let lower = name.trim().to_ascii_lowercase();
        let parts: Vec<&str> = lower.split('-').collect();
        let family = match parts.first().copied() {
            Some("prior") | Some("bootstrap") if parts.len() == 1 => return Ok(Self::PRIOR),
            Some("nn") => Family::Nn,
            Some("rnn") => Family::Rnn,
            _ => return invalid(format!("unknown proposal variant '{name}'")),
        };
        let mut head = Head::Gauss;
        let mut residual_f = false;
        for p in &parts[1..] {
            match *p {
                "md" if head == Head::Gauss && !residual_f => head = Head::Md(components),
                "f" if !residual_f => residual_f = true,
                _ => return invalid(format!("unknown proposal variant '{name}'")),
            }
        }
        Self::new(family, head, residual_f)
    }
}

impl fmt::Display for ProposalVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Prior => return write!(f, "prior"),
            Family::Nn => write!(f, "nn")?,
            Family::Rnn => write!(f, "rnn")?,
        }
        if let Head::Md(_) = self.head {
            write!(f, "-md")?;
        }
        if self.residual_f {
            write!(f, "-f")?;
        }
        Ok(())
    }
}

impl FromStr for ProposalVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, 3)
    }
}

/// Architecture settings that are not part of the variant name.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalOptions {
    /// Hidden width; defaults to 100 for `nn` and 50 for `rnn`.
    pub hidden: Option<usize>,
    pub z_scale: f64,
    pub x_scale: f64,
    pub sigma_floor: f64,
}

impl Default for ProposalOptions {
    fn default() -> Self {
        Self {
            hidden: None,
            z_scale: 1.0,
            x_scale: 1.0,
            sigma_floor: SIGMA_FLOOR,
        }
    }
}

#[derive(Clone, Debug)]
enum Net {
    None,
    Nn { hidden: Dense, head: Dense },
    Rnn { lstm: Lstm, head: Dense },
}

/// A proposal distribution with its parameters `phi`.
#[derive(Clone, Debug)]
pub struct ProposalModel {
    variant: ProposalVariant,
    dim_z: usize,
    dim_x: usize,
    hidden: usize,
    opts: ProposalOptions,
    params: ParamVector,
    net: Net,
}

const TIME_FEATURES: usize = 4;

impl ProposalModel {
    pub fn new(variant: ProposalVariant, dim_z: usize, dim_x: usize, opts: ProposalOptions, rng: &mut RngStream) -> Result<Self> {
        let mut m = Self::build(variant, dim_z, dim_x, opts)?;
        m.initialize(rng);
        Ok(m)
    }

    /// Scales network inputs and outputs with the model's typical magnitudes.
    pub fn for_model<M: crate::models::StateSpaceModel + ?Sized>(
        variant: ProposalVariant,
        model: &M,
        hidden: Option<usize>,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let (z_scale, x_scale) = model.feature_scales();
        let opts = ProposalOptions {
            hidden,
            z_scale,
            x_scale,
            ..ProposalOptions::default()
        };
        Self::new(variant, model.dim_z(), model.dim_x(), opts, rng)
    }

    pub fn prior() -> Self {
        Self::build(ProposalVariant::PRIOR, 0, 0, ProposalOptions::default()).expect("prior proposal is always valid")
    }

    fn build(variant: ProposalVariant, dim_z: usize, dim_x: usize, opts: ProposalOptions) -> Result<Self> {
        if !(opts.z_scale > 0.0 && opts.x_scale > 0.0 && opts.sigma_floor > 0.0) {
            return invalid("proposal scales and sigma floor must be positive");
        }
        let hidden = opts.hidden.unwrap_or(match variant.family {
            Family::Nn => 100,
            Family::Rnn => 50,
            Family::Prior => 0,
        });
        if variant.family != Family::Prior && (hidden == 0 || dim_z == 0 || dim_x == 0) {
            return invalid("network proposals need positive hidden width and dimensions");
        }
        let mut params = ParamVector::new();
        let n_in = dim_x + dim_z + TIME_FEATURES + if variant.residual_f { dim_z } else { 0 };
        let n_out = head_width(variant.head, dim_z);
        let net = match variant.family {
            Family::Prior => Net::None,
            Family::Nn => Net::Nn {
                hidden: Dense::new(&mut params, "hidden", n_in, hidden)?,
                head: Dense::new(&mut params, "head", hidden, n_out)?,
            },
            Family::Rnn => Net::Rnn {
                lstm: Lstm::new(&mut params, "lstm", n_in, hidden)?,
                head: Dense::new(&mut params, "head", hidden, n_out)?,
            },
        };
        Ok(Self {
            variant,
            dim_z,
            dim_x,
            hidden,
            opts,
            params,
            net,
        })
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases except the standard
    /// deviation outputs, which start at `softplus^-1(1)` (unit scale).
    pub fn initialize(&mut self, rng: &mut RngStream) {
        let values = self.params.values_mut();
        let head = match &self.net {
            Net::None => return,
            Net::Nn { hidden, head } => {
                hidden.init(values, rng);
                head
            }
            Net::Rnn { lstm, head } => {
                lstm.init(values, rng);
                head
            }
        };
        head.init(values, rng);
        let (_, _, std_off) = head_offsets(self.variant.head, self.dim_z);
        let b = head.b.of_mut(values);
        let unit = softplus_inv(1.0);
        for v in &mut b[std_off..] {
            *v = unit;
        }
    }

    /// Zeroes every head weight, keeping the head biases.
    pub fn zero_head_weights(&mut self) {
        let head = match &self.net {
            Net::None => return,
            Net::Nn { head, .. } | Net::Rnn { head, .. } => head.clone(),
        };
        head.w.of_mut(self.params.values_mut()).iter_mut().for_each(|w| *w = 0.0);
    }

    pub fn variant(&self) -> ProposalVariant {
        self.variant
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.dim_z, self.dim_x)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn options(&self) -> &ProposalOptions {
        &self.opts
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn is_recurrent(&self) -> bool {
        self.variant.family == Family::Rnn
    }

    pub fn has_parameters(&self) -> bool {
        !self.params.is_empty()
    }

    /// Allocates per-particle state for a new sequence of length `seq_len`.
    /// With `record`, every step's forward values are kept for
    /// [`ProposalRun::accumulate_grad`].
    pub fn begin_sequence(&self, n_particles: usize, seq_len: usize, record: bool) -> ProposalRun {
        let states = if self.is_recurrent() {
            vec![LstmState::zeros(self.hidden); n_particles]
        } else {
            Vec::new()
        };
        ProposalRun {
            n_particles,
            seq_len: seq_len.max(1),
            states,
            lineage: (0..n_particles).collect(),
            pending: (0..n_particles).map(|_| None).collect(),
            current: (0..n_particles).map(|_| None).collect(),
            record,
            steps: Vec::new(),
            t: 0,
        }
    }

    fn features(&self, t: usize, seq_len: usize, x: &[f64], z_prev: Option<&[f64]>, prior: Option<&GaussianMoments>) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.dim_x + 2 * self.dim_z + TIME_FEATURES);
        u.extend(x.iter().map(|v| v / self.opts.x_scale));
        match z_prev {
            Some(z) => u.extend(z.iter().map(|v| v / self.opts.z_scale)),
            None => u.extend(std::iter::repeat_n(0.0, self.dim_z)),
        }
        let tf = t as f64;
        u.push((1.2 * tf).cos());
        u.push((1.2 * tf).sin());
        u.push(tf / seq_len as f64);
        u.push(if t == 1 { 1.0 } else { 0.0 });
        if self.variant.residual_f {
            let p = prior.expect("checked by caller");
            u.extend(p.mean.iter().map(|v| v / self.opts.z_scale));
        }
        u
    }

    /// Maps raw head outputs to mixture parameters; also returns what the
    /// backward pass needs (per-dimension scale, softplus slopes).
    fn head_to_mdn(&self, out: &[f64], prior: Option<&GaussianMoments>) -> (MdnParams, Vec<f64>, Vec<f64>) {
        let d = self.dim_z;
        let k = self.variant.head.components();
        let (mean_off, logit_len, std_off) = head_offsets(self.variant.head, d);
        let (base, scale): (Vec<f64>, Vec<f64>) = match (self.variant.residual_f, prior) {
            (true, Some(p)) => (p.mean.clone(), p.std.clone()),
            _ => (vec![0.0; d], vec![self.opts.z_scale; d]),
        };
        let logits = if logit_len == 0 { vec![0.0] } else { out[..logit_len].to_vec() };
        let mut means = vec![0.0; k * d];
        let mut log_stds = vec![0.0; k * d];
        let mut slopes = vec![0.0; k * d];
        for c in 0..k {
            for j in 0..d {
                let idx = c * d + j;
                let r = out[std_off + idx];
                means[idx] = base[j] + scale[j] * out[mean_off + idx];
                log_stds[idx] = (scale[j] * softplus(r) + self.opts.sigma_floor).ln();
                slopes[idx] = sigmoid(r);
            }
        }
        let mdn = MdnParams::new(logits, means, log_stds).expect("head shapes are consistent");
        (mdn, scale, slopes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, &self.meta(), &self.params)
    }

    pub fn to_checkpoint_string(&self) -> String {
        checkpoint::to_string(&self.meta(), &self.params)
    }

    fn meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("variant".into(), self.variant.to_string());
        m.insert("components".into(), self.variant.head.components().to_string());
        m.insert("hidden".into(), self.hidden.to_string());
        m.insert("dim_z".into(), self.dim_z.to_string());
        m.insert("dim_x".into(), self.dim_x.to_string());
        m.insert("z_scale".into(), self.opts.z_scale.to_string());
        m.insert("x_scale".into(), self.opts.x_scale.to_string());
        m.insert("sigma_floor".into(), self.opts.sigma_floor.to_string());
        m
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, params) = checkpoint::read(path)?;
        Self::from_checkpoint(meta, params)
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let (meta, params) = checkpoint::from_str(text)?;
        Self::from_checkpoint(meta, params)
    }

    fn from_checkpoint(meta: BTreeMap<String, String>, params: ParamVector) -> Result<Self> {
        fn get<T: FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
            meta.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("corrupt checkpoint: missing or bad header '{key}'")))
        }
        let components: usize = get(&meta, "components")?;
        let name: String = get(&meta, "variant")?;
        let variant = ProposalVariant::parse(&name, components).map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))?;
        let opts = ProposalOptions {
            hidden: Some(get(&meta, "hidden")?),
            z_scale: get(&meta, "z_scale")?,
            x_scale: get(&meta, "x_scale")?,
            sigma_floor: get(&meta, "sigma_floor")?,
        };
        let mut m = Self::build(variant, get(&meta, "dim_z")?, get(&meta, "dim_x")?, opts)
            .map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))?;
        if m.params.layout() != params.layout() {
            return Err(Error::Checkpoint("corrupt checkpoint: parameter layout does not match the header".into()));
        }
        m.params = params;
        Ok(m)
    }
}

fn head_width(head: Head, d: usize) -> usize {
    match head {
        Head::Gauss => 2 * d,
        Head::Md(k) => k + 2 * k * d,
    }
}

/// `(mean offset, logit count, std offset)` within the head output.
fn head_offsets(head: Head, d: usize) -> (usize, usize, usize) {
    match head {
        Head::Gauss => (0, 0, d),
        Head::Md(k) => (k, k, k + k * d),
    }
}

#[derive(Clone, Debug)]
enum NodeNet {
    None,
    Nn { tape: Tape },
    Rnn { cache: LstmCache, h: Vec<f64> },
}

/// Forward record of one `(t, particle)` proposal evaluation.
#[derive(Clone, Debug)]
struct Node {
    net: NodeNet,
    mdn: MdnParams,
    scale: Vec<f64>,
    slopes: Vec<f64>,
    /// `d log q / d head-output` once the density has been evaluated.
    out_grad: Option<Vec<f64>>,
    /// Index of the node at the previous step whose recurrent state fed this one.
    parent: usize,
}

/// Per-sequence proposal state: recurrent states per particle and, when
/// recording, the forward records needed for gradients.
#[derive(Clone, Debug)]
pub struct ProposalRun {
    n_particles: usize,
    seq_len: usize,
    states: Vec<LstmState>,
    lineage: Vec<usize>,
    pending: Vec<Option<Node>>,
    current: Vec<Option<Node>>,
    record: bool,
    steps: Vec<Vec<Node>>,
    t: usize,
}

impl ProposalRun {
    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn recurrent_state(&self, particle: usize) -> Option<&LstmState> {
        self.states.get(particle)
    }

    /// Number of completed steps with recorded forward values.
    pub fn recorded_steps(&self) -> usize {
        self.steps.len()
    }

    /// Applies resampling: particle `n` continues from particle
    /// `ancestors[n]`'s recurrent state.
    pub fn reindex(&mut self, ancestors: &[usize]) {
        debug_assert_eq!(ancestors.len(), self.n_particles);
        if !self.states.is_empty() {
            self.states = ancestors.iter().map(|&a| self.states[a].clone()).collect();
        }
        self.lineage = ancestors.iter().map(|&a| self.lineage[a]).collect();
    }

    /// Computes the proposal for `particle` at step `t` (1-based) and, for
    /// recurrent proposals, advances that particle's state.
    #[allow(clippy::too_many_arguments)]
    pub fn condition(
        &mut self,
        proposal: &ProposalModel,
        particle: usize,
        t: usize,
        x_t: &[f64],
        z_prev: Option<&[f64]>,
        prior: Option<&GaussianMoments>,
    ) -> Result<MdnParams> {
        if particle >= self.n_particles {
            return Err(Error::State(format!("particle {particle} was not initialized by begin_sequence")));
        }
        if t == 0 {
            return invalid("time index starts at 1");
        }
        let needs_prior = proposal.variant.family == Family::Prior || proposal.variant.residual_f;
        if needs_prior && prior.is_none() {
            return Err(Error::Unsupported(format!(
                "proposal '{}' needs Gaussian prior moments from the model",
                proposal.variant
            )));
        }
        let values = proposal.params.values();
        let (net, mdn, scale, slopes) = match &proposal.net {
            Net::None => {
                let p = prior.expect("checked above");
                let mdn = MdnParams::gaussian(p.mean.clone(), &p.std)?;
                (NodeNet::None, mdn, Vec::new(), Vec::new())
            }
            Net::Nn { hidden, head } => {
                let u = proposal.features(t, self.seq_len, x_t, z_prev, prior);
                let mut tape = Tape::new();
                let a = tape.dense(hidden, values, &u)?;
                let a = tape.tanh(&a);
                let out = tape.dense(head, values, &a)?;
                let (mdn, scale, slopes) = proposal.head_to_mdn(&out, prior);
                (NodeNet::Nn { tape }, mdn, scale, slopes)
            }
            Net::Rnn { lstm, head } => {
                let u = proposal.features(t, self.seq_len, x_t, z_prev, prior);
                let (next, cache) = lstm.step(values, &self.states[particle], &u)?;
                let mut out = vec![0.0; head.n_out];
                head.forward_into(values, &next.h, &mut out);
                let (mdn, scale, slopes) = proposal.head_to_mdn(&out, prior);
                let h = next.h.clone();
                self.states[particle] = next;
                (NodeNet::Rnn { cache, h }, mdn, scale, slopes)
            }
        };
        self.t = t;
        self.pending[particle] = Some(Node {
            net,
            mdn: mdn.clone(),
            scale,
            slopes,
            out_grad: None,
            parent: self.lineage[particle],
        });
        Ok(mdn)
    }

    /// `log q(z_t)` for the most recent `condition` call of `particle`;
    /// keeps `d log q / d outputs` for a later weighted backward pass.
    pub fn log_density_and_grad(&mut self, proposal: &ProposalModel, particle: usize, z: &[f64]) -> Result<f64> {
        let mut node = match self.pending.get_mut(particle).and_then(Option::take) {
            Some(n) => n,
            None => return Err(Error::State(format!("log_density called before condition for particle {particle}"))),
        };
        if z.len() != node.mdn.dim() {
            return invalid("proposal point has the wrong dimension");
        }
        let lq = if matches!(node.net, NodeNet::None) {
            node.mdn.log_density(z)
        } else {
            let (lq, g) = node.mdn.log_density_grad(z);
            node.out_grad = Some(head_output_grad(proposal, &node, &g));
            lq
        };
        self.current[particle] = Some(node);
        Ok(lq)
    }

    /// Closes the current step. Every particle must have been evaluated.
    pub fn end_step(&mut self) -> Result<()> {
        let nodes: Option<Vec<Node>> = self.current.iter_mut().map(Option::take).collect();
        let nodes = nodes.ok_or_else(|| Error::State(format!("step {} closed before every particle was proposed", self.t)))?;
        self.lineage = (0..self.n_particles).collect();
        if self.record {
            self.steps.push(nodes);
        }
        Ok(())
    }

    /// Drops recorded forward values for all but the latest step.
    pub fn discard_history(&mut self) {
        if self.steps.len() > 1 {
            self.steps.drain(..self.steps.len() - 1);
        }
    }

    /// Adds `sum_t sum_n weights[t][n] * d log q(z_t^n) / d phi` into `grad`.
    ///
    /// `weights` covers the recorded steps (oldest first). For recurrent
    /// proposals the gradient flows back through every particle's ancestral
    /// chain of LSTM states; with `truncate` only through the step's own
    /// cell.
    pub fn accumulate_grad(&self, proposal: &ProposalModel, weights: &[Vec<f64>], grad: &mut [f64], truncate: bool) -> Result<()> {
        if grad.len() != proposal.params.len() {
            return invalid("gradient buffer has the wrong length");
        }
        if matches!(proposal.net, Net::None) {
            return Ok(());
        }
        if !self.record || self.steps.is_empty() {
            return Err(Error::State("no recorded proposal tapes; run the filter with recording enabled".into()));
        }
        if weights.len() > self.steps.len() {
            return Err(Error::State(format!(
                "weights for {} steps but only {} steps are recorded",
                weights.len(),
                self.steps.len()
            )));
        }
        let steps = &self.steps[self.steps.len() - weights.len()..];
        let values = proposal.params.values();
        match &proposal.net {
            Net::None => Ok(()),
            Net::Nn { .. } => {
                for (nodes, w) in steps.iter().zip(weights) {
                    for (node, &wn) in nodes.iter().zip(w) {
                        if wn == 0.0 {
                            continue;
                        }
                        let (NodeNet::Nn { tape }, Some(og)) = (&node.net, &node.out_grad) else {
                            return Err(Error::State("missing proposal tape".into()));
                        };
                        let d: Vec<f64> = og.iter().map(|g| wn * g).collect();
                        tape.backward(values, &d, grad)?;
                    }
                }
                Ok(())
            }
            Net::Rnn { lstm, head } => {
                let hd = lstm.hidden;
                let n = self.n_particles;
                let mut dh_next = vec![0.0; n * hd];
                let mut dc_next = vec![0.0; n * hd];
                let mut dh_head = vec![0.0; hd];
                let mut dh_prev = vec![0.0; hd];
                let mut dc_prev = vec![0.0; hd];
                for (s, (nodes, w)) in steps.iter().zip(weights).enumerate().rev() {
                    let mut dh_acc = vec![0.0; n * hd];
                    let mut dc_acc = vec![0.0; n * hd];
                    for (i, (node, &wn)) in nodes.iter().zip(w).enumerate() {
                        let (NodeNet::Rnn { cache, h }, Some(og)) = (&node.net, &node.out_grad) else {
                            return Err(Error::State("missing proposal tape".into()));
                        };
                        let dh = &mut dh_next[i * hd..(i + 1) * hd];
                        let dc = &dc_next[i * hd..(i + 1) * hd];
                        if wn != 0.0 {
                            let d: Vec<f64> = og.iter().map(|g| wn * g).collect();
                            head.backward(values, h, &d, grad, Some(&mut dh_head));
                            for (a, b) in dh.iter_mut().zip(&dh_head) {
                                *a += b;
                            }
                        }
                        if dh.iter().all(|v| *v == 0.0) && dc.iter().all(|v| *v == 0.0) {
                            continue;
                        }
                        lstm.backward(values, cache, dh, dc, grad, &mut dh_prev, &mut dc_prev, None);
                        if !truncate && s > 0 {
                            let p = node.parent;
                            for j in 0..hd {
                                dh_acc[p * hd + j] += dh_prev[j];
                                dc_acc[p * hd + j] += dc_prev[j];
                            }
                        }
                    }
                    dh_next = dh_acc;
                    dc_next = dc_acc;
                }
                Ok(())
            }
        }
    }
}

/// Chain rule from mixture-parameter gradients to raw head outputs.
fn head_output_grad(proposal: &ProposalModel, node: &Node, g: &crate::nnet::MdnGrad) -> Vec<f64> {
    let d = proposal.dim_z;
    let head = proposal.variant.head;
    let k = head.components();
    let (mean_off, logit_len, std_off) = head_offsets(head, d);
    let mut out = vec![0.0; head_width(head, d)];
    out[..logit_len].copy_from_slice(&g.d_logits[..logit_len]);
    // sigma = scale * softplus(r) + floor, so d log sigma / dr = scale * sigmoid(r) / sigma
    for c in 0..k {
        for j in 0..d {
            let idx = c * d + j;
            let scale = node.scale[j];
            out[mean_off + idx] = scale * g.d_means[idx];
            let sigma = node.mdn.log_stds[idx].exp();
            out[std_off + idx] = g.d_log_stds[idx] * scale * node.slopes[idx] / sigma;
        }
    }
    out
}
