//! Actor and critic networks with hand-written backpropagation.
//!
//! Both networks share one topology:
//!
//! ```text
//! throughput window (j) -> conv1d(filters, kernel, stride 1) -> relu --+
//!                                                                      +-> dense(hidden) -> relu -> head
//! ages (N) ++ last service time (1) ----------------------------------+
//! ```
//!
//! The actor head is `N` logits followed by softmax; the critic head is a
//! single linear unit. Everything is `f64`.

mod checkpoint;
mod optim;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use optim::{apply_update, Direction, OptimizerKind, OptimizerState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::rng;

/// Hidden-layer sizes; the input and output sizes follow from the env.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub filters: usize,
    pub kernel: usize,
    pub hidden: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            filters: 128,
            kernel: 4,
            hidden: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub window: usize,
    /// Dense-path inputs: one per sensor age plus the last service time.
    pub extras: usize,
    pub filters: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl NetShape {
    pub fn actor(n_sensors: usize, history_len: usize, arch: Arch) -> Self {
        NetShape {
            window: history_len,
            extras: n_sensors + 1,
            filters: arch.filters,
            kernel: arch.kernel,
            hidden: arch.hidden,
            outputs: n_sensors,
        }
    }

    pub fn critic(n_sensors: usize, history_len: usize, arch: Arch) -> Self {
        NetShape {
            outputs: 1,
            ..NetShape::actor(n_sensors, history_len, arch)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.kernel == 0 || self.hidden == 0 || self.outputs == 0 {
            return Err(Error::Shape(format!("zero-sized layer in {self:?}")));
        }
        if self.kernel > self.window {
            return Err(Error::Shape(format!(
                "kernel {} wider than throughput window {}",
                self.kernel, self.window
            )));
        }
        Ok(())
    }

    pub fn positions(&self) -> usize {
        self.window + 1 - self.kernel
    }

    pub fn conv_features(&self) -> usize {
        self.positions() * self.filters
    }

    pub fn dense_inputs(&self) -> usize {
        self.conv_features() + self.extras
    }

    pub fn param_count(&self) -> usize {
        let conv = self.filters * self.kernel + self.filters;
        let dense = self.hidden * self.dense_inputs() + self.hidden;
        let head = self.outputs * self.hidden + self.outputs;
        conv + dense + head
    }
}

/// A named view of one parameter tensor.
#[derive(Debug)]
pub struct Layer<'a> {
    pub name: &'static str,
    /// `[len]` for biases, `[rows, cols]` for row-major matrices.
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

pub const LAYER_NAMES: [&str; 6] = [
    "conv.weight",
    "conv.bias",
    "dense.weight",
    "dense.bias",
    "out.weight",
    "out.bias",
];

/// All parameters of one network. Matrices are row-major:
/// `conv_w[f][t]`, `dense_w[h][i]`, `out_w[o][h]`. Conv features are laid out
/// filter-major, `f * positions + p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    shape: NetShape,
    conv_w: Vec<f64>,
    conv_b: Vec<f64>,
    dense_w: Vec<f64>,
    dense_b: Vec<f64>,
    out_w: Vec<f64>,
    out_b: Vec<f64>,
}

impl Weights {
    pub fn zeros(shape: NetShape) -> Self {
        Weights {
            conv_w: vec![0.0; shape.filters * shape.kernel],
            conv_b: vec![0.0; shape.filters],
            dense_w: vec![0.0; shape.hidden * shape.dense_inputs()],
            dense_b: vec![0.0; shape.hidden],
            out_w: vec![0.0; shape.outputs * shape.hidden],
            out_b: vec![0.0; shape.outputs],
            shape,
        }
    }

    /// Glorot-uniform weights and zero biases, drawn from `(seed, purpose)`.
    pub fn init(shape: NetShape, seed: u64, purpose: &str) -> Result<Self> {
        shape.validate()?;
        let mut w = Weights::zeros(shape);
        let mut rng = rng::stream(seed, purpose, 0);
        let mut fill = |data: &mut [f64], fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in data {
                *x = rng.random_range(-bound..bound);
            }
        };
        fill(&mut w.conv_w, shape.kernel, shape.kernel * shape.filters);
        fill(&mut w.dense_w, shape.dense_inputs(), shape.hidden);
        fill(&mut w.out_w, shape.hidden, shape.outputs);
        Ok(w)
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn layers(&self) -> [Layer<'_>; 6] {
        let s = &self.shape;
        [
            Layer { name: LAYER_NAMES[0], dims: vec![s.filters, s.kernel], data: &self.conv_w },
            Layer { name: LAYER_NAMES[1], dims: vec![s.filters], data: &self.conv_b },
            Layer {
                name: LAYER_NAMES[2],
                dims: vec![s.hidden, s.dense_inputs()],
                data: &self.dense_w,
            },
            Layer { name: LAYER_NAMES[3], dims: vec![s.hidden], data: &self.dense_b },
            Layer { name: LAYER_NAMES[4], dims: vec![s.outputs, s.hidden], data: &self.out_w },
            Layer { name: LAYER_NAMES[5], dims: vec![s.outputs], data: &self.out_b },
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.dense_w,
            &mut self.dense_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    fn tensors(&self) -> [&Vec<f64>; 6] {
        [
            &self.conv_w,
            &self.conv_b,
            &self.dense_w,
            &self.dense_b,
            &self.out_w,
            &self.out_b,
        ]
    }

    /// Overwrites one layer by name; the length must match.
    pub fn set_layer(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let idx = LAYER_NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::Shape(format!("unknown layer {name}")))?;
        let slot = &mut self.tensors_mut()[idx];
        if slot.len() != data.len() {
            return Err(Error::Shape(format!(
                "layer {name} expects {} values, got {}",
                slot.len(),
                data.len()
            )));
        }
        **slot = data;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameters concatenated in [`LAYER_NAMES`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, network has {}",
                flat.len(),
                self.len()
            )));
        }
        let mut rest = flat;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn check_congruent(&self, other: &Weights) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Weights, alpha: f64) -> Result<()> {
        self.check_congruent(other)?;
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
        Ok(())
    }

    fn for_each_pair(&mut self, other: &Weights, mut f: impl FnMut(&mut f64, f64)) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                f(d, *s);
            }
        }
    }
}

/// Gradient of a scalar with respect to one network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(Weights);

impl Gradient {
    pub fn zeros(shape: NetShape) -> Self {
        Gradient(Weights::zeros(shape))
    }

    pub fn weights(&self) -> &Weights {
        &self.0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.to_flat()
    }

    pub fn add_scaled(&mut self, other: &Gradient, alpha: f64) -> Result<()> {
        self.0.add_scaled(&other.0, alpha)
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.0
            .tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorParams(pub Weights);

#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams(pub Weights);

impl ActorParams {
    pub fn init(n_sensors: usize, history_len: usize, arch: Arch, seed: u64) -> Result<Self> {
        Weights::init(NetShape::actor(n_sensors, history_len, arch), seed, "init-actor").map(ActorParams)
    }

    pub fn shape(&self) -> &NetShape {
        self.0.shape()
    }
}

impl CriticParams {
    pub fn init(n_sensors: usize, history_len: usize, arch: Arch, seed: u64) -> Result<Self> {
        Weights::init(NetShape::critic(n_sensors, history_len, arch), seed, "init-critic").map(CriticParams)
    }

    pub fn shape(&self) -> &NetShape {
        self.0.shape()
    }
}

/// Input scaling: ages and durations are divided by `age_ms`, throughput by
/// `throughput` (typically the mean trace rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureScale {
    pub age_ms: f64,
    pub throughput: f64,
}

impl FeatureScale {
    pub const DEFAULT_AGE_MS: f64 = 100.0;

    pub fn for_mean_rate(mean_rate: f64) -> Self {
        FeatureScale {
            age_ms: Self::DEFAULT_AGE_MS,
            throughput: mean_rate,
        }
    }

    pub fn identity() -> Self {
        FeatureScale {
            age_ms: 1.0,
            throughput: 1.0,
        }
    }
}

/// Network inputs: the conv-path window and the dense-path extras.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub window: Vec<f64>,
    pub extras: Vec<f64>,
}

pub fn featurize(obs: &Observation, scale: &FeatureScale, shape: &NetShape) -> Result<Features> {
    if obs.recent_throughput.len() != shape.window || obs.ages.len() + 1 != shape.extras {
        return Err(Error::Shape(format!(
            "observation with {} ages and {} throughput entries does not fit a network for {} ages and window {}",
            obs.ages.len(),
            obs.recent_throughput.len(),
            shape.extras - 1,
            shape.window
        )));
    }
    let window = obs
        .recent_throughput
        .iter()
        .map(|r| r / scale.throughput)
        .collect();
    let mut extras: Vec<f64> = obs.ages.iter().map(|a| a / scale.age_ms).collect();
    extras.push(obs.last_service_time / scale.age_ms);
    Ok(Features { window, extras })
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// Dense-layer input: relu(conv) followed by the extras.
    dense_in: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        &self.out
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Four independent accumulators let the compiler vectorize the reduction.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (xa, xb) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += xa[i] * xb[i];
        }
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

fn check_features(w: &Weights, x: &Features) -> Result<()> {
    let s = w.shape();
    if x.window.len() != s.window || x.extras.len() != s.extras {
        return Err(Error::Shape(format!(
            "features ({}, {}) vs network ({}, {})",
            x.window.len(),
            x.extras.len(),
            s.window,
            s.extras
        )));
    }
    if !x.window.iter().chain(&x.extras).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("network input".into()));
    }
    Ok(())
}

/// Forward pass without validation; callers guarantee congruent, finite
/// inputs.
pub fn forward(w: &Weights, x: &Features) -> Activations {
    let s = &w.shape;
    let positions = s.positions();
    let mut dense_in = Vec::with_capacity(s.dense_inputs());
    for f in 0..s.filters {
        let kernel = &w.conv_w[f * s.kernel..(f + 1) * s.kernel];
        for p in 0..positions {
            dense_in.push(relu(w.conv_b[f] + dot(kernel, &x.window[p..p + s.kernel])));
        }
    }
    dense_in.extend_from_slice(&x.extras);
    let n_in = dense_in.len();
    let hidden: Vec<f64> = (0..s.hidden)
        .map(|h| relu(w.dense_b[h] + dot(&w.dense_w[h * n_in..(h + 1) * n_in], &dense_in)))
        .collect();
    let out = (0..s.outputs)
        .map(|o| w.out_b[o] + dot(&w.out_w[o * s.hidden..(o + 1) * s.hidden], &hidden))
        .collect();
    Activations {
        dense_in,
        hidden,
        out,
    }
}

/// Adds `d(out . d_out)/d(params)` into `grad`.
pub fn backward_into(w: &Weights, x: &Features, act: &Activations, d_out: &[f64], grad: &mut Gradient) {
    let s = &w.shape;
    let g = &mut grad.0;
    let n_in = act.dense_in.len();
    let mut d_hidden = vec![0.0; s.hidden];
    for (o, &d) in d_out.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        g.out_b[o] += d;
        let row = &w.out_w[o * s.hidden..(o + 1) * s.hidden];
        let g_row = &mut g.out_w[o * s.hidden..(o + 1) * s.hidden];
        for h in 0..s.hidden {
            g_row[h] += d * act.hidden[h];
            d_hidden[h] += d * row[h];
        }
    }
    let conv_features = s.conv_features();
    let mut d_conv = vec![0.0; conv_features];
    for h in 0..s.hidden {
        if act.hidden[h] <= 0.0 {
            continue;
        }
        let d = d_hidden[h];
        if d == 0.0 {
            continue;
        }
        g.dense_b[h] += d;
        let row = &w.dense_w[h * n_in..(h + 1) * n_in];
        let g_row = &mut g.dense_w[h * n_in..(h + 1) * n_in];
        for (gi, zi) in g_row.iter_mut().zip(&act.dense_in) {
            *gi += d * zi;
        }
        for (dc, wi) in d_conv.iter_mut().zip(&row[..conv_features]) {
            *dc += d * wi;
        }
    }
    let positions = s.positions();
    for f in 0..s.filters {
        for p in 0..positions {
            let idx = f * positions + p;
            if act.dense_in[idx] <= 0.0 {
                continue;
            }
            let d = d_conv[idx];
            g.conv_b[f] += d;
            let g_kernel = &mut g.conv_w[f * s.kernel..(f + 1) * s.kernel];
            for (gk, xk) in g_kernel.iter_mut().zip(&x.window[p..p + s.kernel]) {
                *gk += d * xk;
            }
        }
    }
}

/// Numerically stable softmax and log-softmax of `logits`.
pub fn softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    let log_probs: Vec<f64> = logits.iter().map(|z| z - lse).collect();
    let probs = log_probs.iter().map(|l| l.exp()).collect();
    (probs, log_probs)
}

/// Entropy of a distribution given its probabilities and log-probabilities.
pub fn entropy_of(probs: &[f64], log_probs: &[f64]) -> f64 {
    -probs
        .iter()
        .zip(log_probs)
        .map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 })
        .sum::<f64>()
}

fn checked_forward(w: &Weights, x: &Features) -> Result<Activations> {
    check_features(w, x)?;
    if !w.is_finite() {
        return Err(Error::NonFinite("network parameters".into()));
    }
    let act = forward(w, x);
    if !act.out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("network output".into()));
    }
    Ok(act)
}

/// Action probabilities `pi(s, .)`.
pub fn forward_actor(params: &ActorParams, x: &Features) -> Result<Vec<f64>> {
    let act = checked_forward(&params.0, x)?;
    Ok(softmax(&act.out).0)
}

/// State value `V(s)`.
pub fn forward_critic(params: &CriticParams, x: &Features) -> Result<f64> {
    Ok(checked_forward(&params.0, x)?.out[0])
}

/// Entropy of `pi(s, .)`.
pub fn entropy(params: &ActorParams, x: &Features) -> Result<f64> {
    let act = checked_forward(&params.0, x)?;
    let (p, lp) = softmax(&act.out);
    Ok(entropy_of(&p, &lp))
}

/// Logit-space gradient of `adv * log pi(a) + beta * H(pi)`.
pub fn policy_logit_grad(probs: &[f64], log_probs: &[f64], action: usize, adv: f64, beta: f64) -> Vec<f64> {
    let h = entropy_of(probs, log_probs);
    probs
        .iter()
        .zip(log_probs)
        .enumerate()
        .map(|(i, (p, lp))| {
            let score = if i == action { 1.0 - p } else { -p };
            let ent = if *p > 0.0 { -p * (lp + h) } else { 0.0 };
            adv * score + beta * ent
        })
        .collect()
}

fn finite_gradient(g: Gradient, what: &str) -> Result<Gradient> {
    if g.is_finite() {
        Ok(g)
    } else {
        Err(Error::NonFinite(format!("gradient of {what}")))
    }
}

/// `grad_theta log pi(s, a)`.
pub fn grad_log_prob(params: &ActorParams, x: &Features, action: usize) -> Result<Gradient> {
    let w = &params.0;
    if action >= w.shape.outputs {
        return Err(Error::ActionOutOfRange {
            action,
            sensors: w.shape.outputs,
        });
    }
    let act = checked_forward(w, x)?;
    let (p, lp) = softmax(&act.out);
    let d = policy_logit_grad(&p, &lp, action, 1.0, 0.0);
    let mut g = Gradient::zeros(w.shape);
    backward_into(w, x, &act, &d, &mut g);
    finite_gradient(g, "log-probability")
}

/// `grad_theta H(pi(s, .))`.
pub fn grad_entropy(params: &ActorParams, x: &Features) -> Result<Gradient> {
    let w = &params.0;
    let act = checked_forward(w, x)?;
    let (p, lp) = softmax(&act.out);
    let d = policy_logit_grad(&p, &lp, 0, 0.0, 1.0);
    let mut g = Gradient::zeros(w.shape);
    backward_into(w, x, &act, &d, &mut g);
    finite_gradient(g, "entropy")
}

/// `grad_theta_v (target - V(s))^2`.
pub fn grad_value_sq_err(params: &CriticParams, x: &Features, target: f64) -> Result<Gradient> {
    if !target.is_finite() {
        return Err(Error::NonFinite("TD target".into()));
    }
    let w = &params.0;
    let act = checked_forward(w, x)?;
    let d = -2.0 * (target - act.out[0]);
    let mut g = Gradient::zeros(w.shape);
    backward_into(w, x, &act, &[d], &mut g);
    finite_gradient(g, "squared TD error")
}
