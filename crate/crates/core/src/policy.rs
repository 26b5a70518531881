//! Attention encoder / pointer decoder policy.
//!
//! Node features are embedded by one linear layer, refined by a stack of
//! multi-head attention blocks (residual + layer norm), and decoded
//! autoregressively: a context query `[mean(h), h_prev, h_first, state]`
//! glimpses over the nodes, and the glimpse scores every node through
//! `C * tanh(.)` clipped logits. Only structural masks are applied (visited
//! nodes, vehicle capacity); time windows, drafts and fleet size are left to
//! the loss.
//!
//! Every forward pass records on a fresh [`Tape`], so sampling, greedy
//! rollouts and teacher-forced scoring of given trajectories all expose the
//! per-trajectory log-likelihood column for the reverse pass.

use crate::problems::{dist, ProblemInstance, Trajectory, Variant};
use crate::rng::{domain, StreamRng};
use crate::tape::{Tape, TapeError, Tensor, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `[x, y, e, l, demand, draft, is_depot]`.
pub const NODE_FEATURES: usize = 7;
/// `[time, load, visited fraction]`.
pub const STATE_FEATURES: usize = 3;
/// Per-candidate `[window slack, wait, draft slack, distance]`.
pub const DYNAMIC_FEATURES: usize = 4;
pub const INIT_RANGE: f64 = 0.08;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("parameter vector has {found} entries, manifest needs {expected}")]
    Length { expected: usize, found: usize },
    #[error("parameter {0} is not finite")]
    NonFinite(usize),
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("no valid next node for sample {sample}")]
    DeadEnd { sample: usize },
    #[error("trajectory {sample} takes a masked step to node {node}")]
    MaskedStep { sample: usize, node: usize },
    #[error("instance has no customers")]
    Empty,
    #[error(transparent)]
    Tape(#[from] TapeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Tiny,
    Small,
}

impl std::str::FromStr for Preset {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "small" => Ok(Preset::Small),
            other => Err(PolicyError::Hyper(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyHyper {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub logit_clip: f64,
    pub ff_dim: usize,
}

impl Default for PolicyHyper {
    fn default() -> Self {
        Self::preset(Preset::Small)
    }
}

impl PolicyHyper {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Tiny => Self {
                embed_dim: 8,
                layers: 1,
                heads: 2,
                logit_clip: 10.0,
                ff_dim: 16,
            },
            Preset::Small => Self {
                embed_dim: 32,
                layers: 2,
                heads: 4,
                logit_clip: 10.0,
                ff_dim: 64,
            },
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.embed_dim == 0 || self.heads == 0 || self.ff_dim == 0 {
            return Err(PolicyError::Hyper("dimensions must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(PolicyError::Hyper(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if !(self.logit_clip > 0.0) {
            return Err(PolicyError::Hyper("logit_clip must be positive".into()));
        }
        Ok(())
    }

    /// Named parameter blocks in storage order.
    pub fn manifest(&self) -> Vec<ParamEntry> {
        let (d, ff) = (self.embed_dim, self.ff_dim);
        let mut m = vec![ParamEntry::new("embed.w", NODE_FEATURES, d), ParamEntry::new("embed.b", 1, d)];
        for l in 0..self.layers {
            for w in ["wq", "wk", "wv", "wo"] {
                m.push(ParamEntry::new(&format!("enc{l}.{w}"), d, d));
            }
            m.push(ParamEntry::new(&format!("enc{l}.ff1.w"), d, ff));
            m.push(ParamEntry::new(&format!("enc{l}.ff1.b"), 1, ff));
            m.push(ParamEntry::new(&format!("enc{l}.ff2.w"), ff, d));
            m.push(ParamEntry::new(&format!("enc{l}.ff2.b"), 1, d));
        }
        m.push(ParamEntry::new("dec.ctx.w", 3 * d + STATE_FEATURES, d));
        for w in ["wk", "wv", "wo", "wl"] {
            m.push(ParamEntry::new(&format!("dec.{w}"), d, d));
        }
        m.push(ParamEntry::new("dec.dyn.w", DYNAMIC_FEATURES, 1));
        m
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl ParamEntry {
    fn new(name: &str, rows: usize, cols: usize) -> Self {
        Self {
            name: name.to_string(),
            rows,
            cols,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector plus its shape manifest. Values are kept
/// representable in `f32` so checkpoints round-trip bitwise.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub hyper: PolicyHyper,
    pub manifest: Vec<ParamEntry>,
    pub values: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(hyper: PolicyHyper) -> Result<Self, PolicyError> {
        hyper.validate()?;
        let manifest = hyper.manifest();
        let len = manifest.iter().map(ParamEntry::len).sum();
        Ok(Self {
            hyper,
            manifest,
            values: vec![0.0; len],
        })
    }

    /// Seeded uniform initialization in `[-0.08, 0.08]`.
    pub fn init(hyper: PolicyHyper, seed: u64) -> Result<Self, PolicyError> {
        let mut p = Self::zeros(hyper)?;
        let mut rng = StreamRng::new(seed, domain::INIT, 0);
        for v in &mut p.values {
            *v = rng.uniform_in(-INIT_RANGE, INIT_RANGE);
        }
        p.quantize();
        Ok(p)
    }

    pub fn from_values(hyper: PolicyHyper, values: Vec<f64>) -> Result<Self, PolicyError> {
        let mut p = Self::zeros(hyper)?;
        p.values = values;
        p.validate()?;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let expected: usize = self.manifest.iter().map(ParamEntry::len).sum();
        if expected != self.values.len() {
            return Err(PolicyError::Length {
                expected,
                found: self.values.len(),
            });
        }
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(PolicyError::NonFinite(i)),
            None => Ok(()),
        }
    }

    /// Rounds every value to the nearest `f32`.
    pub fn quantize(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }

    pub fn to_le_f32_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
    }

    pub fn values_from_le_f32_bytes(bytes: &[u8]) -> Vec<f64> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect()
    }
}

struct EncoderLayer {
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    ff1_w: Var,
    ff1_b: Var,
    ff2_w: Var,
    ff2_b: Var,
}

struct Bound {
    embed_w: Var,
    embed_b: Var,
    layers: Vec<EncoderLayer>,
    ctx_w: Var,
    dec_wk: Var,
    dec_wv: Var,
    dec_wo: Var,
    dec_wl: Var,
    dyn_w: Var,
}

fn bind(tape: &mut Tape, params: &PolicyParams, values: &[f64]) -> Bound {
    let mut offset = 0;
    let mut vars = params.manifest.iter().map(|e| {
        let v = tape.param(values, offset, e.rows, e.cols);
        offset += e.len();
        v
    });
    let mut next = || vars.next().expect("manifest exhausted");
    let embed_w = next();
    let embed_b = next();
    let layers = (0..params.hyper.layers)
        .map(|_| EncoderLayer {
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
            ff1_w: next(),
            ff1_b: next(),
            ff2_w: next(),
            ff2_b: next(),
        })
        .collect();
    Bound {
        embed_w,
        embed_b,
        layers,
        ctx_w: next(),
        dec_wk: next(),
        dec_wv: next(),
        dec_wo: next(),
        dec_wl: next(),
        dyn_w: next(),
    }
}

/// Normalizers that keep features O(1).
#[derive(Clone, Copy, Debug)]
struct Scales {
    time: f64,
    /// Mean leg duration, `time / n`; scales the per-candidate slacks.
    leg: f64,
    load: f64,
    draft: f64,
}

impl Scales {
    fn of(inst: &ProblemInstance) -> Self {
        let time = if inst.variant.has_time_windows() && inst.nodes[0].tw_late.is_finite() && inst.nodes[0].tw_late > 0.0 {
            inst.nodes[0].tw_late
        } else {
            1.0
        };
        let total = inst.total_demand().max(1e-12);
        let load = match inst.variant {
            Variant::Cvrptw | Variant::Cvrptwlv => inst.capacity.unwrap_or(total),
            _ => total,
        };
        Self {
            time,
            leg: time / inst.customers().max(1) as f64,
            load,
            draft: total,
        }
    }
}

/// Static node features, one row per node.
pub fn node_features(inst: &ProblemInstance) -> Tensor {
    let s = Scales::of(inst);
    let tw = inst.variant.has_time_windows();
    let mut data = Vec::with_capacity(inst.nodes.len() * NODE_FEATURES);
    for (i, n) in inst.nodes.iter().enumerate() {
        let (e, l) = if tw && n.tw_late.is_finite() {
            (n.tw_early / s.time, n.tw_late / s.time)
        } else {
            (0.0, 0.0)
        };
        let draft = n.draft.map_or(0.0, |d| d / s.draft);
        data.extend_from_slice(&[n.x, n.y, e, l, n.demand / s.load, draft, (i == 0) as u8 as f64]);
    }
    Tensor::new(inst.nodes.len(), NODE_FEATURES, data)
}

fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize, mask: &[bool]) -> Var {
    let d = tape.value(q).cols;
    let dh = d / heads;
    let inv = 1.0 / (dh as f64).sqrt();
    let outs: Vec<Var> = (0..heads)
        .map(|h| {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let s = tape.matmul_t(qh, kh);
            let s = tape.scale(s, inv);
            let p = tape.masked_softmax(s, mask);
            tape.matmul(p, vh)
        })
        .collect();
    if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)
    }
}

fn encode_bound(tape: &mut Tape, b: &Bound, hyper: &PolicyHyper, inst: &ProblemInstance) -> Var {
    let x = tape.constant(node_features(inst));
    let h = tape.matmul(x, b.embed_w);
    let mut h = tape.add_row(h, b.embed_b);
    let m = inst.nodes.len();
    let all = vec![true; m * m];
    for layer in &b.layers {
        let q = tape.matmul(h, layer.wq);
        let k = tape.matmul(h, layer.wk);
        let v = tape.matmul(h, layer.wv);
        let att = attention(tape, q, k, v, hyper.heads, &all);
        let att = tape.matmul(att, layer.wo);
        let r = tape.add(h, att);
        h = tape.layer_norm(r);
        let f = tape.matmul(h, layer.ff1_w);
        let f = tape.add_row(f, layer.ff1_b);
        let f = tape.gelu(f);
        let f = tape.matmul(f, layer.ff2_w);
        let f = tape.add_row(f, layer.ff2_b);
        let r = tape.add(h, f);
        h = tape.layer_norm(r);
    }
    h
}

/// Node embeddings (`(n+1) x embed_dim`) on a fresh tape.
pub fn encode(inst: &ProblemInstance, params: &PolicyParams) -> Result<(Tape, Var), PolicyError> {
    params.validate()?;
    let mut tape = Tape::new(params.len());
    let b = bind(&mut tape, params, &params.values);
    let h = encode_bound(&mut tape, &b, &params.hyper, inst);
    Ok((tape, h))
}

/// Sampled or greedy trajectories with aligned log-likelihoods.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub trajectories: Vec<Trajectory>,
    pub logprobs: Vec<f64>,
    /// First customer of each trajectory.
    pub starts: Vec<usize>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// A finished forward pass: the samples plus the tape holding their
/// log-likelihood column (`N x 1`).
pub struct Rollout {
    pub samples: SampleSet,
    pub tape: Tape,
    pub logprobs: Var,
}

impl Rollout {
    /// Records a scalar loss given its value and its gradient with respect
    /// to the log-likelihoods.
    pub fn attach_loss(&mut self, value: f64, dlogp: Vec<f64>) -> Var {
        self.tape.custom_scalar(self.logprobs, value, dlogp)
    }

    /// Gradient of `loss` with respect to the parameter vector.
    pub fn backward(&self, loss: Var) -> Result<Vec<f64>, PolicyError> {
        Ok(backward(&self.tape, loss)?)
    }
}

/// Gradient of a scalar recorded on `tape` with respect to the parameters.
pub fn backward(tape: &Tape, loss: Var) -> Result<Vec<f64>, TapeError> {
    tape.backward(loss)
}

enum Chooser<'a> {
    Sample(&'a mut StreamRng),
    Greedy,
    Forced(&'a [Trajectory]),
}

#[derive(Clone, Debug)]
struct Walker {
    cur: usize,
    t: f64,
    load: f64,
    visited: Vec<bool>,
    n_visited: usize,
    steps: Vec<usize>,
    done: bool,
    /// Read position inside a forced trajectory.
    pos: usize,
}

impl Walker {
    fn start(inst: &ProblemInstance, s: usize) -> Self {
        let multi = inst.variant.is_multi_route();
        let mut w = Walker {
            cur: 0,
            t: inst.nodes[0].tw_early,
            load: if inst.variant == Variant::Tspdl { inst.total_demand() } else { 0.0 },
            visited: vec![false; inst.nodes.len()],
            n_visited: 0,
            steps: if multi { vec![0] } else { Vec::new() },
            done: false,
            pos: if multi { 2 } else { 1 },
        };
        w.advance(inst, s);
        w
    }

    fn advance(&mut self, inst: &ProblemInstance, j: usize) {
        let nodes = &inst.nodes;
        self.steps.push(j);
        if j == 0 {
            self.t = nodes[0].tw_early;
            self.load = 0.0;
            self.cur = 0;
            if self.n_visited == inst.customers() {
                self.done = true;
            }
            return;
        }
        self.t = (self.t + nodes[self.cur].service + dist(inst, self.cur, j)).max(nodes[j].tw_early);
        if inst.variant == Variant::Tspdl {
            self.load -= nodes[j].demand;
        } else {
            self.load += nodes[j].demand;
        }
        self.visited[j] = true;
        self.n_visited += 1;
        self.cur = j;
        if !inst.variant.is_multi_route() && self.n_visited == inst.customers() {
            self.done = true;
        }
    }

    fn mask_into(&self, inst: &ProblemInstance, row: &mut [bool]) {
        row.fill(false);
        if self.done {
            row[0] = true;
            return;
        }
        let multi = inst.variant.is_multi_route();
        let cap = inst.capacity.unwrap_or(f64::INFINITY);
        for j in 1..row.len() {
            row[j] = !self.visited[j] && (!multi || self.load + inst.nodes[j].demand <= cap);
        }
        if multi && self.cur != 0 {
            row[0] = true;
        }
    }

    fn dynamic_into(&self, inst: &ProblemInstance, s: Scales, out: &mut Vec<f64>) {
        let tw = inst.variant.has_time_windows();
        let dl = inst.variant == Variant::Tspdl;
        let nodes = &inst.nodes;
        for j in 0..nodes.len() {
            let d = dist(inst, self.cur, j);
            let (slack, wait) = if tw && nodes[j].tw_late.is_finite() {
                let arr = self.t + nodes[self.cur].service + d;
                ((nodes[j].tw_late - arr) / s.leg, (nodes[j].tw_early - arr).max(0.0) / s.leg)
            } else {
                (0.0, 0.0)
            };
            let draft = match (dl, nodes[j].draft) {
                (true, Some(limit)) => (limit - self.load) / s.draft,
                _ => 0.0,
            };
            out.extend_from_slice(&[slack, wait, draft, d]);
        }
    }

    fn state(&self, inst: &ProblemInstance, s: Scales) -> [f64; STATE_FEATURES] {
        let time = if inst.variant.has_time_windows() { self.t / s.time } else { 0.0 };
        [time, self.load / s.load, self.n_visited as f64 / inst.customers() as f64]
    }
}

fn run(
    inst: &ProblemInstance,
    params: &PolicyParams,
    starts: Vec<usize>,
    mut chooser: Chooser<'_>,
) -> Result<Rollout, PolicyError> {
    params.validate()?;
    let n = inst.customers();
    if n == 0 {
        return Err(PolicyError::Empty);
    }
    let hyper = &params.hyper;
    let d = hyper.embed_dim;
    let m = inst.nodes.len();
    let rows = starts.len();
    let scales = Scales::of(inst);
    let mut tape = Tape::new(params.len());
    let b = bind(&mut tape, params, &params.values);
    let h = encode_bound(&mut tape, &b, hyper, inst);
    let hbar = tape.mean_rows(h);
    let hbar_rep = tape.select_rows(hbar, &vec![0; rows]);
    let kg = tape.matmul(h, b.dec_wk);
    let vg = tape.matmul(h, b.dec_wv);
    let kl = tape.matmul(h, b.dec_wl);
    let first = tape.select_rows(h, &starts);
    let inv_d = 1.0 / (d as f64).sqrt();

    let mut walkers: Vec<Walker> = starts.iter().map(|&s| Walker::start(inst, s)).collect();
    let mut acc: Option<Var> = None;
    let mut mask = vec![false; rows * m];
    let max_steps = 2 * n + 2;
    for _ in 0..max_steps {
        if walkers.iter().all(|w| w.done) {
            break;
        }
        for (i, w) in walkers.iter().enumerate() {
            w.mask_into(inst, &mut mask[i * m..(i + 1) * m]);
            if !mask[i * m..(i + 1) * m].iter().any(|&x| x) {
                return Err(PolicyError::DeadEnd { sample: i });
            }
        }
        let singleton = (0..rows).all(|i| mask[i * m..(i + 1) * m].iter().filter(|&&x| x).count() == 1);
        let choices: Vec<usize> = if singleton {
            (0..rows).map(|i| mask[i * m..(i + 1) * m].iter().position(|&x| x).unwrap()).collect()
        } else {
            let cur: Vec<usize> = walkers.iter().map(|w| w.cur).collect();
            let hcur = tape.select_rows(h, &cur);
            let mut state = Vec::with_capacity(rows * STATE_FEATURES);
            let mut dynamic = Vec::with_capacity(rows * m * DYNAMIC_FEATURES);
            for w in &walkers {
                state.extend_from_slice(&w.state(inst, scales));
                w.dynamic_into(inst, scales, &mut dynamic);
            }
            let state = tape.constant(Tensor::new(rows, STATE_FEATURES, state));
            let ctx = tape.concat_cols(&[hbar_rep, hcur, first, state]);
            let q = tape.matmul(ctx, b.ctx_w);
            let g = attention(&mut tape, q, kg, vg, hyper.heads, &mask);
            let g = tape.matmul(g, b.dec_wo);
            let u = tape.matmul_t(g, kl);
            let u = tape.scale(u, inv_d);
            let dynamic = tape.constant(Tensor::new(rows * m, DYNAMIC_FEATURES, dynamic));
            let dv = tape.matmul(dynamic, b.dyn_w);
            let dv = tape.reshape(dv, rows, m);
            let z = tape.add(u, dv);
            let z = tape.tanh(z);
            let logits = tape.scale(z, hyper.logit_clip);
            let lp = tape.masked_log_softmax(logits, &mask);
            let lpv = tape.value(lp).clone();
            let mut choices = Vec::with_capacity(rows);
            for (i, w) in walkers.iter().enumerate() {
                let row = lpv.row(i);
                let valid = &mask[i * m..(i + 1) * m];
                let c = match &mut chooser {
                    Chooser::Sample(rng) => {
                        let weights: Vec<f64> = row.iter().zip(valid).map(|(&x, &ok)| if ok { x.exp() } else { 0.0 }).collect();
                        rng.categorical(&weights)
                    }
                    Chooser::Greedy => {
                        let mut best = None;
                        for j in 0..m {
                            if valid[j] && best.map_or(true, |b: usize| row[j] > row[b]) {
                                best = Some(j);
                            }
                        }
                        best.unwrap()
                    }
                    Chooser::Forced(trajs) => {
                        if w.done {
                            0
                        } else {
                            trajs[i].steps.get(w.pos).copied().unwrap_or(usize::MAX)
                        }
                    }
                };
                choices.push(c);
            }
            for (i, &c) in choices.iter().enumerate() {
                if c >= m || !mask[i * m + c] {
                    return Err(PolicyError::MaskedStep { sample: i, node: c });
                }
            }
            let at: Vec<(usize, usize)> = choices.iter().copied().enumerate().collect();
            let picked = tape.gather(lp, &at);
            acc = Some(match acc {
                Some(a) => tape.add(a, picked),
                None => picked,
            });
            choices
        };
        for (i, (w, &c)) in walkers.iter_mut().zip(&choices).enumerate() {
            if w.done {
                continue;
            }
            if let Chooser::Forced(trajs) = &chooser {
                if trajs[i].steps.get(w.pos) != Some(&c) {
                    return Err(PolicyError::MaskedStep { sample: i, node: c });
                }
            }
            w.advance(inst, c);
            w.pos += 1;
        }
    }
    if let Some(i) = walkers.iter().position(|w| !w.done) {
        return Err(PolicyError::DeadEnd { sample: i });
    }
    if let Chooser::Forced(trajs) = &chooser {
        for (i, (w, t)) in walkers.iter().zip(trajs.iter()).enumerate() {
            if w.steps != t.steps {
                return Err(PolicyError::MaskedStep { sample: i, node: *t.steps.last().unwrap_or(&0) });
            }
        }
    }
    let logprobs = match acc {
        Some(a) => a,
        None => tape.constant(Tensor::zeros(rows, 1)),
    };
    let lps = tape.value(logprobs).data.clone();
    let samples = SampleSet {
        trajectories: walkers.into_iter().map(|w| Trajectory::new(w.steps)).collect(),
        logprobs: lps,
        starts,
    };
    Ok(Rollout { samples, tape, logprobs })
}

/// Round-robin first customers for `count` multi-start rollouts.
pub fn multi_starts(inst: &ProblemInstance, count: usize) -> Vec<usize> {
    let n = inst.customers().max(1);
    (0..count).map(|s| 1 + s % n).collect()
}

/// Samples `n_samples` trajectories, first moves assigned round-robin over
/// customers (the forced first move carries no log-probability).
pub fn decode_sample(
    inst: &ProblemInstance,
    params: &PolicyParams,
    n_samples: usize,
    rng: &mut StreamRng,
) -> Result<Rollout, PolicyError> {
    if n_samples == 0 {
        return Err(PolicyError::NoSamples);
    }
    run(inst, params, multi_starts(inst, n_samples), Chooser::Sample(rng))
}

/// Argmax decoding from `n_starts` distinct first customers (round-robin).
pub fn greedy_rollout(inst: &ProblemInstance, params: &PolicyParams, n_starts: usize) -> Result<Rollout, PolicyError> {
    if n_starts == 0 {
        return Err(PolicyError::NoSamples);
    }
    run(inst, params, multi_starts(inst, n_starts), Chooser::Greedy)
}

/// Teacher-forced log-likelihoods of the given trajectories.
pub fn score_trajectories(
    inst: &ProblemInstance,
    params: &PolicyParams,
    trajs: &[Trajectory],
) -> Result<Rollout, PolicyError> {
    if trajs.is_empty() {
        return Err(PolicyError::NoSamples);
    }
    let multi = inst.variant.is_multi_route();
    let starts = trajs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let s = if multi { t.steps.get(1) } else { t.steps.first() };
            match s {
                Some(&s) if s >= 1 && s <= inst.customers() => Ok(s),
                _ => Err(PolicyError::MaskedStep { sample: i, node: s.copied().unwrap_or(0) }),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    run(inst, params, starts, Chooser::Forced(trajs))
}
