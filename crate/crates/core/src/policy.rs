//! Autoregressive nucleotide policy.
//!
//! The next-base distribution is computed from the last `w` bases of the
//! prefix (left-padded with a BOS symbol): each context symbol is embedded,
//! the embeddings are concatenated and passed through one tanh hidden layer,
//! and a final affine layer produces four logits.
//!
//! Parameters live in one flat vector. The first layer acting on a one-hot
//! embedded context is a sum of per-(position, symbol) columns, so evaluation
//! precomputes those projections once per parameter snapshot.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motifs::Sequence;
use crate::rng;

pub const BOS: u8 = 4;
const SYMBOLS: usize = 5;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Sequences per gradient chunk; partial gradients are summed in chunk order.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub window: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl Default for PolicyShape {
    fn default() -> Self {
        PolicyShape {
            window: 8,
            embed_dim: 16,
            hidden: 64,
        }
    }
}

impl PolicyShape {
    fn input(&self) -> usize {
        self.window * self.embed_dim
    }

    fn emb_offset(&self) -> usize {
        0
    }

    fn w1_offset(&self) -> usize {
        SYMBOLS * self.embed_dim
    }

    fn b1_offset(&self) -> usize {
        self.w1_offset() + self.hidden * self.input()
    }

    fn w2_offset(&self) -> usize {
        self.b1_offset() + self.hidden
    }

    fn b2_offset(&self) -> usize {
        self.w2_offset() + 4 * self.hidden
    }

    pub fn num_params(&self) -> usize {
        self.b2_offset() + 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidInput(format!("degenerate policy shape {self:?}")));
        }
        Ok(())
    }
}

/// Flat parameter vector: embeddings (5 x d), layer-1 weights (H x w*d,
/// row per hidden unit) and bias, output weights (4 x H) and bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    pub values: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Result<Self> {
        shape.validate()?;
        Ok(PolicyParams {
            shape,
            values: vec![0.0; shape.num_params()],
        })
    }

    /// Gaussian embeddings and first layer, zero output layer (uniform
    /// policy).
    pub fn init(shape: PolicyShape, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        let mut r = rng::stream(seed, &[0x706f_6c69]);
        let scale = 1.0 / (shape.input() as f64).sqrt();
        for v in &mut p.values[..shape.w1_offset()] {
            *v = StandardNormal.sample(&mut r);
        }
        for v in &mut p.values[shape.w1_offset()..shape.b1_offset()] {
            let z: f64 = StandardNormal.sample(&mut r);
            *v = z * scale;
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.values.len() != self.shape.num_params() {
            return Err(Error::LengthMismatch {
                expected: self.shape.num_params(),
                actual: self.values.len(),
            });
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite policy parameter at index {i}")));
        }
        Ok(())
    }

    fn emb(&self) -> &[f64] {
        &self.values[self.shape.emb_offset()..self.shape.w1_offset()]
    }

    fn w1(&self) -> &[f64] {
        &self.values[self.shape.w1_offset()..self.shape.b1_offset()]
    }

    fn b1(&self) -> &[f64] {
        &self.values[self.shape.b1_offset()..self.shape.w2_offset()]
    }

    fn w2(&self) -> &[f64] {
        &self.values[self.shape.w2_offset()..self.shape.b2_offset()]
    }

    fn b2(&self) -> &[f64] {
        &self.values[self.shape.b2_offset()..]
    }

    /// Versioned JSON checkpoint.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            format_version: CHECKPOINT_VERSION,
            shape: self.shape,
            num_params: self.values.len(),
            values: self.values.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format_version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint version {}",
                c.format_version
            )));
        }
        if c.num_params != c.values.len() {
            return Err(Error::LengthMismatch {
                expected: c.num_params,
                actual: c.values.len(),
            });
        }
        let p = PolicyParams {
            shape: c.shape,
            values: c.values,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    shape: PolicyShape,
    num_params: usize,
    values: Vec<f64>,
}

/// The last `window` symbols of a prefix, left-padded with [`BOS`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateEncoding {
    pub context: Vec<u8>,
    pub position: usize,
}

impl StateEncoding {
    pub fn from_prefix(prefix: &[u8], window: usize) -> Self {
        let mut context = vec![BOS; window];
        fill_context(prefix, &mut context);
        StateEncoding {
            context,
            position: prefix.len(),
        }
    }

    pub fn validate(&self, shape: &PolicyShape) -> Result<()> {
        if self.context.len() != shape.window {
            return Err(Error::LengthMismatch {
                expected: shape.window,
                actual: self.context.len(),
            });
        }
        if self.context.iter().any(|&c| c as usize >= SYMBOLS) {
            return Err(Error::InvalidInput("context symbol out of range".into()));
        }
        Ok(())
    }
}

fn fill_context(prefix: &[u8], ctx: &mut [u8]) {
    let w = ctx.len();
    let i = prefix.len();
    for (p, c) in ctx.iter_mut().enumerate() {
        *c = if i + p >= w { prefix[i + p - w] } else { BOS };
    }
}

/// Reference forward pass straight from the definition.
pub fn logits(params: &PolicyParams, state: &StateEncoding) -> Result<[f64; 4]> {
    params.validate()?;
    state.validate(&params.shape)?;
    let s = params.shape;
    let d = s.embed_dim;
    let mut input = Vec::with_capacity(s.input());
    for &c in &state.context {
        input.extend_from_slice(&params.emb()[c as usize * d..(c as usize + 1) * d]);
    }
    let hidden: Vec<f64> = (0..s.hidden)
        .map(|j| {
            let row = &params.w1()[j * s.input()..(j + 1) * s.input()];
            (params.b1()[j] + row.iter().zip(&input).map(|(a, b)| a * b).sum::<f64>()).tanh()
        })
        .collect();
    let mut out = [0.0; 4];
    for (c, o) in out.iter_mut().enumerate() {
        let row = &params.w2()[c * s.hidden..(c + 1) * s.hidden];
        *o = params.b2()[c] + row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(out)
}

/// Log-softmax and entropy of a logit vector.
pub fn log_softmax(z: &[f64; 4]) -> ([f64; 4], f64) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
    let lse = m + sum.ln();
    let mut logp = [0.0; 4];
    let mut entropy = 0.0;
    for c in 0..4 {
        logp[c] = z[c] - lse;
        entropy -= logp[c].exp() * logp[c];
    }
    (logp, entropy.max(0.0))
}

/// A parameter snapshot prepared for fast evaluation.
pub struct CompiledPolicy<'a> {
    params: &'a PolicyParams,
    /// `proj[(p * 5 + sym) * H + j]`: contribution of symbol `sym` at context
    /// position `p` to hidden pre-activation `j`.
    proj: Vec<f64>,
}

struct StepCache {
    ctx: Vec<u8>,
    hidden: Vec<f64>,
    logp: [f64; 4],
    entropy: f64,
}

impl<'a> CompiledPolicy<'a> {
    pub fn new(params: &'a PolicyParams) -> Result<Self> {
        params.validate()?;
        let s = params.shape;
        let (d, h, n_in) = (s.embed_dim, s.hidden, s.input());
        let mut proj = vec![0.0; s.window * SYMBOLS * h];
        for p in 0..s.window {
            for sym in 0..SYMBOLS {
                let e = &params.emb()[sym * d..(sym + 1) * d];
                let out = &mut proj[(p * SYMBOLS + sym) * h..(p * SYMBOLS + sym + 1) * h];
                for (j, o) in out.iter_mut().enumerate() {
                    let w = &params.w1()[j * n_in + p * d..j * n_in + (p + 1) * d];
                    *o = w.iter().zip(e).map(|(a, b)| a * b).sum();
                }
            }
        }
        Ok(CompiledPolicy { params, proj })
    }

    pub fn shape(&self) -> PolicyShape {
        self.params.shape
    }

    fn forward(&self, cache: &mut StepCache) {
        let s = self.params.shape;
        let h = s.hidden;
        cache.hidden.copy_from_slice(self.params.b1());
        for (p, &sym) in cache.ctx.iter().enumerate() {
            let col = &self.proj[(p * SYMBOLS + sym as usize) * h..(p * SYMBOLS + sym as usize + 1) * h];
            for (a, b) in cache.hidden.iter_mut().zip(col) {
                *a += b;
            }
        }
        cache.hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut z = [0.0; 4];
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &self.params.w2()[c * h..(c + 1) * h];
            *zc = self.params.b2()[c] + row.iter().zip(&cache.hidden).map(|(a, b)| a * b).sum::<f64>();
        }
        let (logp, entropy) = log_softmax(&z);
        cache.logp = logp;
        cache.entropy = entropy;
    }

    fn cache(&self) -> StepCache {
        let s = self.params.shape;
        StepCache {
            ctx: vec![BOS; s.window],
            hidden: vec![0.0; s.hidden],
            logp: [0.0; 4],
            entropy: 0.0,
        }
    }

    /// Log-probabilities and entropy of the next base after `prefix`.
    pub fn next_distribution(&self, prefix: &[u8]) -> ([f64; 4], f64) {
        let mut c = self.cache();
        fill_context(prefix, &mut c.ctx);
        self.forward(&mut c);
        (c.logp, c.entropy)
    }

    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Sample {
        let mut c = self.cache();
        let mut codes = Vec::with_capacity(len);
        let mut log_probs = Vec::with_capacity(len);
        let mut entropies = Vec::with_capacity(len);
        for _ in 0..len {
            fill_context(&codes, &mut c.ctx);
            self.forward(&mut c);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut a = 3;
            for k in 0..4 {
                acc += c.logp[k].exp();
                if u < acc {
                    a = k;
                    break;
                }
            }
            // guard against rounding leaving `u` past the last mass
            while c.logp[a] == f64::NEG_INFINITY {
                a -= 1;
            }
            codes.push(a as u8);
            log_probs.push(c.logp[a]);
            entropies.push(c.entropy);
        }
        Sample {
            sequence: Sequence::from_codes(codes).expect("sampled codes are bases"),
            log_probs,
            entropies,
        }
    }

    pub fn log_prob(&self, seq: &Sequence) -> f64 {
        let mut c = self.cache();
        let codes = seq.codes();
        let mut total = 0.0;
        for i in 0..codes.len() {
            fill_context(&codes[..i], &mut c.ctx);
            self.forward(&mut c);
            total += c.logp[codes[i] as usize];
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sequence: Sequence,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
}

/// Ancestral sampling of `len` bases.
pub fn sample_sequence<R: Rng + ?Sized>(params: &PolicyParams, len: usize, rng: &mut R) -> Result<Sample> {
    if len == 0 {
        return Err(Error::InvalidInput("sequence length must be at least 1".into()));
    }
    Ok(CompiledPolicy::new(params)?.sample(len, rng))
}

/// `count` samples, sample `k` drawn from stream `(seed, path..., k)`.
pub fn sample_batch(params: &PolicyParams, len: usize, count: usize, seed: u64, path: &[u64]) -> Result<Vec<Sample>> {
    if len == 0 {
        return Err(Error::InvalidInput("sequence length must be at least 1".into()));
    }
    let policy = CompiledPolicy::new(params)?;
    Ok((0..count)
        .into_par_iter()
        .map(|k| {
            let mut full = path.to_vec();
            full.push(k as u64);
            policy.sample(len, &mut rng::stream(seed, &full))
        })
        .collect())
}

pub fn sequence_log_prob(params: &PolicyParams, seq: &Sequence) -> Result<f64> {
    Ok(CompiledPolicy::new(params)?.log_prob(seq))
}

/// One weighted sequence in a policy objective:
/// `logp_weight * sum_i ln pi(a_i) + entropy_weight * sum_i H_i`.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveTerm<'a> {
    pub sequence: &'a Sequence,
    pub logp_weight: f64,
    pub entropy_weight: f64,
}

/// Accumulators that do not depend on the embedding/first-layer split:
/// per-(position, symbol) hidden gradients, then b1, w2, b2.
struct RawGrad {
    value: f64,
    data: Vec<f64>,
}

fn raw_len(s: &PolicyShape) -> usize {
    s.window * SYMBOLS * s.hidden + s.hidden + 4 * s.hidden + 4
}

fn accumulate(policy: &CompiledPolicy, terms: &[ObjectiveTerm]) -> RawGrad {
    let s = policy.shape();
    let h = s.hidden;
    let g_len = s.window * SYMBOLS * h;
    let mut raw = RawGrad {
        value: 0.0,
        data: vec![0.0; raw_len(&s)],
    };
    let (g, rest) = raw.data.split_at_mut(g_len);
    let (db1, rest) = rest.split_at_mut(h);
    let (dw2, db2) = rest.split_at_mut(4 * h);
    let w2 = policy.params.w2();
    let mut c = policy.cache();
    let mut dpre = vec![0.0; h];
    for term in terms {
        let codes = term.sequence.codes();
        for i in 0..codes.len() {
            fill_context(&codes[..i], &mut c.ctx);
            policy.forward(&mut c);
            let a = codes[i] as usize;
            raw.value += term.logp_weight * c.logp[a] + term.entropy_weight * c.entropy;
            let mut dz = [0.0; 4];
            for k in 0..4 {
                let p = c.logp[k].exp();
                let onehot = if k == a { 1.0 } else { 0.0 };
                dz[k] = term.logp_weight * (onehot - p) - term.entropy_weight * p * (c.logp[k] + c.entropy);
            }
            for j in 0..h {
                let mut dh = 0.0;
                for k in 0..4 {
                    dw2[k * h + j] += dz[k] * c.hidden[j];
                    dh += w2[k * h + j] * dz[k];
                }
                dpre[j] = dh * (1.0 - c.hidden[j] * c.hidden[j]);
                db1[j] += dpre[j];
            }
            for k in 0..4 {
                db2[k] += dz[k];
            }
            for (p, &sym) in c.ctx.iter().enumerate() {
                let col = &mut g[(p * SYMBOLS + sym as usize) * h..(p * SYMBOLS + sym as usize + 1) * h];
                for (a, b) in col.iter_mut().zip(&dpre) {
                    *a += b;
                }
            }
        }
    }
    raw
}

fn finalize(params: &PolicyParams, raw: &RawGrad) -> Vec<f64> {
    let s = params.shape;
    let (d, h, n_in) = (s.embed_dim, s.hidden, s.input());
    let g_len = s.window * SYMBOLS * h;
    let mut grad = vec![0.0; s.num_params()];
    let (g, rest) = raw.data.split_at(g_len);
    let emb = params.emb();
    let w1 = params.w1();
    {
        let (demb, rest_grad) = grad.split_at_mut(s.w1_offset());
        let dw1 = &mut rest_grad[..s.b1_offset() - s.w1_offset()];
        for p in 0..s.window {
            for sym in 0..SYMBOLS {
                let col = &g[(p * SYMBOLS + sym) * h..(p * SYMBOLS + sym + 1) * h];
                let e = &emb[sym * d..(sym + 1) * d];
                for (j, &gj) in col.iter().enumerate() {
                    if gj == 0.0 {
                        continue;
                    }
                    let base = j * n_in + p * d;
                    for k in 0..d {
                        dw1[base + k] += gj * e[k];
                        demb[sym * d + k] += gj * w1[base + k];
                    }
                }
            }
        }
    }
    grad[s.b1_offset()..].copy_from_slice(rest);
    grad
}

/// Objective value and gradient for a list of weighted sequences.
pub fn objective_and_grad(params: &PolicyParams, terms: &[ObjectiveTerm]) -> Result<(f64, Vec<f64>)> {
    let policy = CompiledPolicy::new(params)?;
    let partial: Vec<RawGrad> = terms
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| accumulate(&policy, chunk))
        .collect();
    let mut total = RawGrad {
        value: 0.0,
        data: vec![0.0; raw_len(&params.shape)],
    };
    for p in &partial {
        total.value += p.value;
        for (a, b) in total.data.iter_mut().zip(&p.data) {
            *a += b;
        }
    }
    let grad = finalize(params, &total);
    Ok((total.value, grad))
}

/// Mean over the batch of the summed per-base negative log-likelihood.
pub fn nll_and_grad(params: &PolicyParams, batch: &[Sequence]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let w = -1.0 / batch.len() as f64;
    let terms: Vec<ObjectiveTerm> = batch
        .iter()
        .map(|s| ObjectiveTerm {
            sequence: s,
            logp_weight: w,
            entropy_weight: 0.0,
        })
        .collect();
    objective_and_grad(params, &terms)
}

pub fn nll(params: &PolicyParams, data: &[Sequence]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let policy = CompiledPolicy::new(params)?;
    let lp: Vec<f64> = data.par_iter().map(|s| policy.log_prob(s)).collect();
    Ok(-lp.iter().sum::<f64>() / data.len() as f64)
}

/// Rescale `grad` to at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// `params -= lr * grad`.
pub fn sgd_step(params: &mut PolicyParams, grad: &[f64], lr: f64) {
    if lr == 0.0 {
        return;
    }
    for (p, g) in params.values.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 20,
            lr: 0.05,
            batch_size: 32,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean per-sequence negative log-likelihood over the full dataset.
    pub nll: f64,
    pub nll_per_base: f64,
}

/// Minibatch SGD with gradient-norm clipping on the sequence NLL. Epoch 0
/// in the returned curve is the loss before training.
pub fn pretrain(params: &PolicyParams, data: &[Sequence], config: &PretrainConfig) -> Result<(PolicyParams, Vec<EpochLoss>)> {
    if data.is_empty() {
        return Err(Error::InvalidInput("pretraining dataset is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be at least 1".into()));
    }
    if !(config.lr >= 0.0) || !(config.clip_norm > 0.0) {
        return Err(Error::InvalidInput("learning rate must be >= 0 and clip norm > 0".into()));
    }
    let bases = data.iter().map(Sequence::len).sum::<usize>() as f64 / data.len() as f64;
    let mut p = params.clone();
    let mut curve = Vec::with_capacity(config.epochs + 1);
    let record = |epoch: usize, p: &PolicyParams, curve: &mut Vec<EpochLoss>| -> Result<()> {
        let loss = nll(p, data)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("pretraining diverged: loss {loss} after epoch {epoch}")));
        }
        curve.push(EpochLoss {
            epoch,
            nll: loss,
            nll_per_base: loss / bases,
        });
        Ok(())
    };
    record(0, &p, &mut curve)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch: Vec<Sequence> = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.epochs {
        let mut r = rng::stream(config.seed, &[0x7072_6574, epoch as u64]);
        for i in (1..order.len()).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let (loss, mut grad) = nll_and_grad(&p, &batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "pretraining diverged at epoch {epoch}, batch {b}: loss {loss}"
                )));
            }
            clip_grad_norm(&mut grad, config.clip_norm);
            sgd_step(&mut p, &grad, config.lr);
        }
        record(epoch, &p, &mut curve)?;
    }
    Ok((p, curve))
}

pub fn write_curve_csv<W: Write>(w: W, curve: &[EpochLoss]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in curve {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}
