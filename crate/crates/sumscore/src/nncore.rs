//! Minimal dense-tensor neural toolkit: layers with hand-written gradients,
//! Adam, losses, a mini-batch trainer, and a finite-difference gradient
//! checker. No general autodiff; the model zoo is small and fixed, and
//! [`gradient_check`] is the safety net.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAD_CHECK_H: f64 = 1e-5;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Uniform init on (-scale, scale).
    pub fn uniform(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.shape)
    }

    fn rows(&self) -> usize {
        self.shape[0]
    }

    fn cols(&self) -> usize {
        self.shape[1]
    }

    /// y = W x for a 2-D (rows x cols) tensor.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.shape.len(), 2, "matvec needs a 2-D tensor");
        assert_eq!(self.cols(), x.len(), "matvec dim mismatch");
        let (r, c) = (self.rows(), self.cols());
        let mut y = vec![0.0; r];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            y[i] = row.iter().zip(x).map(|(w, v)| w * v).sum();
        }
        y
    }

    /// x = W^T y for a 2-D tensor.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(self.shape.len(), 2, "matvec_t needs a 2-D tensor");
        assert_eq!(self.rows(), y.len(), "matvec_t dim mismatch");
        let (r, c) = (self.rows(), self.cols());
        let mut x = vec![0.0; c];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            for (xj, w) in x.iter_mut().zip(row) {
                *xj += w * y[i];
            }
        }
        x
    }

    /// self += y x^T (outer product accumulate into a 2-D tensor).
    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        assert_eq!(self.shape.len(), 2);
        assert_eq!(self.rows(), y.len());
        assert_eq!(self.cols(), x.len());
        let c = self.cols();
        for (i, &yi) in y.iter().enumerate() {
            let row = &mut self.data[i * c..(i + 1) * c];
            for (w, &xj) in row.iter_mut().zip(x) {
                *w += yi * xj;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }
}

/// Named parameter tensors; the unit Adam, the gradient checker, and
/// serialized model bundles all operate on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("no parameter named {name:?}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.zeros_like()))
                .collect(),
        }
    }

    /// self += other * scale, matched by name.
    pub fn axpy(&mut self, other: &ParamSet, scale: f64) {
        for (name, grad) in &other.entries {
            self.entries
                .get_mut(name)
                .unwrap_or_else(|| panic!("no parameter named {name:?}"))
                .add_scaled(grad, scale);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.entries.values_mut() {
            for v in t.data.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn n_values(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// Activations

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&v| match self {
                Activation::Relu => v.max(0.0),
                Activation::Sigmoid => sigmoid(v),
                Activation::Tanh => v.tanh(),
            })
            .collect()
    }

    /// Gradient through the activation given input x, output y, and upstream
    /// gradient.
    pub fn backward(&self, x: &[f64], y: &[f64], grad_y: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(y)
            .zip(grad_y)
            .map(|((&xi, &yi), &g)| match self {
                Activation::Relu => {
                    if xi > 0.0 {
                        g
                    } else {
                        0.0
                    }
                }
                Activation::Sigmoid => g * yi * (1.0 - yi),
                Activation::Tanh => g * (1.0 - yi * yi),
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Dense layer

/// y = W x + b.
pub fn dense_forward(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut y = w.matvec(x);
    assert_eq!(b.len(), y.len(), "bias dim mismatch");
    for (yi, bi) in y.iter_mut().zip(&b.data) {
        *yi += bi;
    }
    y
}

/// Gradients of a dense layer: returns (grad_x, grad_w, grad_b).
pub fn dense_backward(x: &[f64], w: &Tensor, grad_y: &[f64]) -> (Vec<f64>, Tensor, Tensor) {
    let grad_x = w.matvec_t(grad_y);
    let mut grad_w = w.zeros_like();
    grad_w.add_outer(grad_y, x);
    let grad_b = Tensor::from_vec(&[grad_y.len()], grad_y.to_vec());
    (grad_x, grad_w, grad_b)
}

// ---------------------------------------------------------------------------
// Convolution and pooling

/// Valid-padding cross-correlation. Input `[C, H, W]`, kernels
/// `[OC, C, KH, KW]`, bias `[OC]`; output `[OC, OH, OW]`.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Tensor {
    assert_eq!(x.shape.len(), 3, "conv input must be [C,H,W]");
    assert_eq!(w.shape.len(), 4, "conv kernels must be [OC,C,KH,KW]");
    assert!(stride >= 1);
    let (c, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oc, kc, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    assert_eq!(c, kc, "channel mismatch");
    assert_eq!(b.len(), oc, "bias mismatch");
    assert!(h >= kh && wd >= kw, "kernel larger than input");
    let oh = (h - kh) / stride + 1;
    let ow = (wd - kw) / stride + 1;
    let mut out = Tensor::zeros(&[oc, oh, ow]);
    for o in 0..oc {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b.data[o];
                for ch in 0..c {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let xi = x.data[ch * h * wd + (i * stride + ki) * wd + j * stride + kj];
                            let wv = w.data[((o * c + ch) * kh + ki) * kw + kj];
                            acc += xi * wv;
                        }
                    }
                }
                out.data[o * oh * ow + i * ow + j] = acc;
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`]: (grad_x, grad_w, grad_b).
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
) -> (Tensor, Tensor, Tensor) {
    let (c, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oc, _, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    let (oh, ow) = (grad_out.shape[1], grad_out.shape[2]);
    let mut grad_x = x.zeros_like();
    let mut grad_w = w.zeros_like();
    let mut grad_b = Tensor::zeros(&[oc]);
    for o in 0..oc {
        for i in 0..oh {
            for j in 0..ow {
                let g = grad_out.data[o * oh * ow + i * ow + j];
                grad_b.data[o] += g;
                for ch in 0..c {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let xi_idx = ch * h * wd + (i * stride + ki) * wd + j * stride + kj;
                            let w_idx = ((o * c + ch) * kh + ki) * kw + kj;
                            grad_x.data[xi_idx] += g * w.data[w_idx];
                            grad_w.data[w_idx] += g * x.data[xi_idx];
                        }
                    }
                }
            }
        }
    }
    (grad_x, grad_w, grad_b)
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled tensor and the flat argmax index per output cell.
pub fn max_pool2_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    assert_eq!(x.shape.len(), 3, "pool input must be [C,H,W]");
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    assert!(oh >= 1 && ow >= 1, "input too small to pool");
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut argmax = vec![0usize; c * oh * ow];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for di in 0..2 {
                    for dj in 0..2 {
                        let idx = ch * h * w + (2 * i + di) * w + 2 * j + dj;
                        if x.data[idx] > best {
                            best = x.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let out_idx = ch * oh * ow + i * ow + j;
                out.data[out_idx] = best;
                argmax[out_idx] = best_idx;
            }
        }
    }
    (out, argmax)
}

pub fn max_pool2_backward(x: &Tensor, argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut grad_x = x.zeros_like();
    for (out_idx, &src) in argmax.iter().enumerate() {
        grad_x.data[src] += grad_out.data[out_idx];
    }
    grad_x
}

// ---------------------------------------------------------------------------
// LSTM

/// LSTM weights: input `w` (4H x D), recurrent `u` (4H x H), bias `b` (4H),
/// gate order [i, f, g, o].
#[derive(Clone, Copy)]
pub struct LstmParams<'a> {
    pub w: &'a Tensor,
    pub u: &'a Tensor,
    pub b: &'a Tensor,
}

impl LstmParams<'_> {
    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }
}

/// Per-step cache for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// One LSTM step with cache.
pub fn lstm_step_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: LstmParams,
) -> (Vec<f64>, Vec<f64>, LstmStepCache) {
    let hidden = p.hidden();
    assert_eq!(h_prev.len(), hidden);
    assert_eq!(c_prev.len(), hidden);
    let mut z = p.w.matvec(x);
    let zu = p.u.matvec(h_prev);
    for ((zi, ui), bi) in z.iter_mut().zip(&zu).zip(&p.b.data) {
        *zi += ui + bi;
    }
    let i: Vec<f64> = z[0..hidden].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[hidden..2 * hidden].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[2 * hidden..3 * hidden].iter().map(|&v| v.tanh()).collect();
    let o: Vec<f64> = z[3 * hidden..4 * hidden].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<f64> = (0..hidden)
        .map(|k| f[k] * c_prev[k] + i[k] * g[k])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|&v| v.tanh()).collect();
    let h: Vec<f64> = (0..hidden).map(|k| o[k] * tanh_c[k]).collect();
    let cache = LstmStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        tanh_c,
    };
    (h, c, cache)
}

/// One LSTM step without cache.
pub fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: LstmParams) -> (Vec<f64>, Vec<f64>) {
    let (h, c, _) = lstm_step_forward(x, h_prev, c_prev, p);
    (h, c)
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

impl LstmGrads {
    pub fn zeros(p: LstmParams) -> Self {
        LstmGrads {
            w: p.w.zeros_like(),
            u: p.u.zeros_like(),
            b: p.b.zeros_like(),
        }
    }
}

/// Backward through one step. `grad_h` and `grad_c` are the incoming
/// gradients on h_t and c_t; returns (grad_x, grad_h_prev, grad_c_prev) and
/// accumulates parameter gradients into `grads`.
pub fn lstm_step_backward(
    p: LstmParams,
    cache: &LstmStepCache,
    grad_h: &[f64],
    grad_c: &[f64],
    grads: &mut LstmGrads,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hidden = p.hidden();
    let mut dz = vec![0.0; 4 * hidden];
    let mut grad_c_prev = vec![0.0; hidden];
    for k in 0..hidden {
        let d_o = grad_h[k] * cache.tanh_c[k];
        let dc = grad_h[k] * cache.o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]) + grad_c[k];
        let d_i = dc * cache.g[k];
        let d_f = dc * cache.c_prev[k];
        let d_g = dc * cache.i[k];
        grad_c_prev[k] = dc * cache.f[k];
        dz[k] = d_i * cache.i[k] * (1.0 - cache.i[k]);
        dz[hidden + k] = d_f * cache.f[k] * (1.0 - cache.f[k]);
        dz[2 * hidden + k] = d_g * (1.0 - cache.g[k] * cache.g[k]);
        dz[3 * hidden + k] = d_o * cache.o[k] * (1.0 - cache.o[k]);
    }
    grads.w.add_outer(&dz, &cache.x);
    grads.u.add_outer(&dz, &cache.h_prev);
    for (b, d) in grads.b.data.iter_mut().zip(&dz) {
        *b += d;
    }
    let grad_x = p.w.matvec_t(&dz);
    let grad_h_prev = p.u.matvec_t(&dz);
    (grad_x, grad_h_prev, grad_c_prev)
}

// ---------------------------------------------------------------------------
// Bidirectional LSTM encoder

#[derive(Debug, Clone)]
pub struct BilstmCache {
    fwd: Vec<LstmStepCache>,
    bwd: Vec<LstmStepCache>,
}

/// Encodes a sequence with two directional LSTMs. Returns the final state
/// s = [h_fwd(T); h_bwd(1)], the per-token states a(t) = [h_fwd(t); h_bwd(t)],
/// and the cache for backpropagation.
pub fn bilstm_forward(
    seq: &[Vec<f64>],
    fwd: LstmParams,
    bwd: LstmParams,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, BilstmCache)> {
    if seq.is_empty() {
        return Err(Error::invalid("bilstm needs a non-empty sequence"));
    }
    let hidden = fwd.hidden();
    assert_eq!(bwd.hidden(), hidden, "direction hidden sizes differ");
    let t_len = seq.len();

    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut fwd_states = Vec::with_capacity(t_len);
    let mut fwd_caches = Vec::with_capacity(t_len);
    for x in seq {
        let (nh, nc, cache) = lstm_step_forward(x, &h, &c, fwd);
        h = nh;
        c = nc;
        fwd_states.push(h.clone());
        fwd_caches.push(cache);
    }

    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut bwd_states = vec![Vec::new(); t_len];
    let mut bwd_caches: Vec<Option<LstmStepCache>> = vec![None; t_len];
    for t in (0..t_len).rev() {
        let (nh, nc, cache) = lstm_step_forward(&seq[t], &h, &c, bwd);
        h = nh;
        c = nc;
        bwd_states[t] = h.clone();
        bwd_caches[t] = Some(cache);
    }

    let mut s = fwd_states[t_len - 1].clone();
    s.extend_from_slice(&bwd_states[0]);
    let a: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            let mut v = fwd_states[t].clone();
            v.extend_from_slice(&bwd_states[t]);
            v
        })
        .collect();
    Ok((
        s,
        a,
        BilstmCache {
            fwd: fwd_caches,
            bwd: bwd_caches.into_iter().map(|c| c.unwrap()).collect(),
        },
    ))
}

/// Backward through the bidirectional encoder. `grad_s` is the gradient on
/// the final state, `grad_a[t]` on each per-token state (pass zero vectors
/// when unused). Returns per-token input gradients and both directions'
/// parameter gradients.
pub fn bilstm_backward(
    fwd: LstmParams,
    bwd: LstmParams,
    cache: &BilstmCache,
    grad_s: &[f64],
    grad_a: &[Vec<f64>],
) -> (Vec<Vec<f64>>, LstmGrads, LstmGrads) {
    let hidden = fwd.hidden();
    let t_len = cache.fwd.len();
    assert_eq!(grad_s.len(), 2 * hidden);
    assert_eq!(grad_a.len(), t_len);
    let mut grad_seq = vec![vec![0.0; cache.fwd[0].x.len()]; t_len];
    let mut fwd_grads = LstmGrads::zeros(fwd);
    let mut bwd_grads = LstmGrads::zeros(bwd);

    // Forward direction: dependencies run t-1 -> t, so gradients flow T -> 1.
    let mut gh = vec![0.0; hidden];
    let mut gc = vec![0.0; hidden];
    for t in (0..t_len).rev() {
        for k in 0..hidden {
            gh[k] += grad_a[t][k];
            if t == t_len - 1 {
                gh[k] += grad_s[k];
            }
        }
        let (gx, gh_prev, gc_prev) =
            lstm_step_backward(fwd, &cache.fwd[t], &gh, &gc, &mut fwd_grads);
        for (a, b) in grad_seq[t].iter_mut().zip(&gx) {
            *a += b;
        }
        gh = gh_prev;
        gc = gc_prev;
    }

    // Backward direction: dependencies run t+1 -> t, so gradients flow 1 -> T.
    let mut gh = vec![0.0; hidden];
    let mut gc = vec![0.0; hidden];
    for t in 0..t_len {
        for k in 0..hidden {
            gh[k] += grad_a[t][hidden + k];
            if t == 0 {
                gh[k] += grad_s[hidden + k];
            }
        }
        let (gx, gh_prev, gc_prev) =
            lstm_step_backward(bwd, &cache.bwd[t], &gh, &gc, &mut bwd_grads);
        for (a, b) in grad_seq[t].iter_mut().zip(&gx) {
            *a += b;
        }
        gh = gh_prev;
        gc = gc_prev;
    }

    (grad_seq, fwd_grads, bwd_grads)
}

// ---------------------------------------------------------------------------
// Attention

/// Attention parameters: alignment vectors `w_aa` (over a(t)) and `w_sa`
/// (over s), and the output combination `w_sm`, `w_rm`, `b`.
#[derive(Clone, Copy)]
pub struct AttentionParams<'a> {
    pub w_aa: &'a Tensor,
    pub w_sa: &'a Tensor,
    pub w_sm: &'a Tensor,
    pub w_rm: &'a Tensor,
    pub b: &'a Tensor,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    s: Vec<f64>,
    a: Vec<Vec<f64>>,
    weights: Vec<f64>,
    r: Vec<f64>,
    m: Vec<f64>,
}

impl AttentionCache {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The attended combination r = sum_t a(t) w(t).
    pub fn r(&self) -> &[f64] {
        &self.r
    }
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Attention combination:
///   alpha(t) = w_aa . a(t) + w_sa . s
///   w = softmax(alpha)
///   r = sum_t a(t) w(t)
///   m = tanh(W_sm s + W_rm r + b)
/// Returns m and the cache (which exposes the attention weights).
pub fn attention_forward(
    s: &[f64],
    a: &[Vec<f64>],
    p: AttentionParams,
) -> Result<(Vec<f64>, AttentionCache)> {
    if a.is_empty() {
        return Err(Error::invalid("attention needs at least one token state"));
    }
    let dim_a = a[0].len();
    assert_eq!(p.w_aa.len(), dim_a, "w_aa dim mismatch");
    assert_eq!(p.w_sa.len(), s.len(), "w_sa dim mismatch");
    let s_term: f64 = p.w_sa.data.iter().zip(s).map(|(w, v)| w * v).sum();
    let alpha: Vec<f64> = a
        .iter()
        .map(|at| {
            let a_term: f64 = p.w_aa.data.iter().zip(at).map(|(w, v)| w * v).sum();
            a_term + s_term
        })
        .collect();
    let weights = softmax(&alpha);
    let mut r = vec![0.0; dim_a];
    for (at, &wt) in a.iter().zip(&weights) {
        for (rk, &ak) in r.iter_mut().zip(at) {
            *rk += ak * wt;
        }
    }
    let mut pre = dense_forward(s, p.w_sm, p.b);
    let rm = p.w_rm.matvec(&r);
    for (pi, ri) in pre.iter_mut().zip(&rm) {
        *pi += ri;
    }
    let m: Vec<f64> = pre.iter().map(|&v| v.tanh()).collect();
    let cache = AttentionCache {
        s: s.to_vec(),
        a: a.to_vec(),
        weights,
        r,
        m: m.clone(),
    };
    Ok((m, cache))
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub w_aa: Tensor,
    pub w_sa: Tensor,
    pub w_sm: Tensor,
    pub w_rm: Tensor,
    pub b: Tensor,
}

/// Backward through [`attention_forward`]: returns (grad_s, grad_a, grads).
pub fn attention_backward(
    p: AttentionParams,
    cache: &AttentionCache,
    grad_m: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>, AttentionGrads) {
    let t_len = cache.a.len();
    let dim_a = cache.a[0].len();
    let dpre: Vec<f64> = grad_m
        .iter()
        .zip(&cache.m)
        .map(|(&g, &m)| g * (1.0 - m * m))
        .collect();

    let mut g = AttentionGrads {
        w_aa: p.w_aa.zeros_like(),
        w_sa: p.w_sa.zeros_like(),
        w_sm: p.w_sm.zeros_like(),
        w_rm: p.w_rm.zeros_like(),
        b: p.b.zeros_like(),
    };
    g.w_sm.add_outer(&dpre, &cache.s);
    g.w_rm.add_outer(&dpre, &cache.r);
    for (b, d) in g.b.data.iter_mut().zip(&dpre) {
        *b += d;
    }
    let mut grad_s = p.w_sm.matvec_t(&dpre);
    let grad_r = p.w_rm.matvec_t(&dpre);

    // r = sum_t w(t) a(t)
    let mut grad_w: Vec<f64> = cache
        .a
        .iter()
        .map(|at| at.iter().zip(&grad_r).map(|(a, g)| a * g).sum())
        .collect();
    let mut grad_a: Vec<Vec<f64>> = cache
        .a
        .iter()
        .zip(&cache.weights)
        .map(|(_, &wt)| grad_r.iter().map(|&gr| gr * wt).collect())
        .collect();

    // softmax backward: dalpha_t = w_t (grad_w_t - sum_k w_k grad_w_k)
    let dot: f64 = cache
        .weights
        .iter()
        .zip(&grad_w)
        .map(|(&w, &gw)| w * gw)
        .sum();
    for (dal, &w) in grad_w.iter_mut().zip(&cache.weights) {
        *dal = w * (*dal - dot);
    }
    let dalpha = grad_w;

    // alpha(t) = w_aa . a(t) + w_sa . s
    let dalpha_sum: f64 = dalpha.iter().sum();
    for (t, &da) in dalpha.iter().enumerate() {
        for k in 0..dim_a {
            g.w_aa.data[k] += da * cache.a[t][k];
            grad_a[t][k] += da * p.w_aa.data[k];
        }
    }
    for (k, &sv) in cache.s.iter().enumerate() {
        g.w_sa.data[k] += dalpha_sum * sv;
    }
    for (gs, &w) in grad_s.iter_mut().zip(&p.w_sa.data) {
        *gs += dalpha_sum * w;
    }

    debug_assert_eq!(grad_a.len(), t_len);
    (grad_s, grad_a, g)
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted dropout: surviving activations are scaled by 1/(1-rate) so
/// inference needs no rescaling. Returns (output, mask).
pub fn dropout_forward(x: &[f64], rate: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
    if rate == 0.0 {
        return (x.to_vec(), vec![1.0; x.len()]);
    }
    let keep = 1.0 - rate;
    let mask: Vec<f64> = x
        .iter()
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    (x.iter().zip(&mask).map(|(v, m)| v * m).collect(), mask)
}

pub fn dropout_backward(mask: &[f64], grad_y: &[f64]) -> Vec<f64> {
    mask.iter().zip(grad_y).map(|(m, g)| m * g).collect()
}

// ---------------------------------------------------------------------------
// Losses

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Bce,
}

/// Mean squared error and its gradient w.r.t. predictions.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len());
    let n = pred.len() as f64;
    let loss = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    (loss, grad)
}

/// Binary cross-entropy on a logit, with the numerically stable form
/// max(z,0) - z t + ln(1 + exp(-|z|)); gradient is sigmoid(z) - t.
pub fn bce_with_logits(logit: f64, target: f64) -> (f64, f64) {
    let loss = logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - target)
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: usize,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam::with_betas(lr, 0.9, 0.999)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, grad) in grads.iter() {
            let p = params.get_mut(name);
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| grad.zeros_like());
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| grad.zeros_like());
            for k in 0..grad.len() {
                let g = grad.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * g;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * g * g;
                let mhat = m.data[k] / bc1;
                let vhat = v.data[k] / bc2;
                p.data[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Trainer

/// A model trainable by [`train`]: exposes its parameters and per-sample
/// losses/gradients. `loss_and_grads` runs in training mode (dropout active,
/// drawing from the supplied rng); `loss` runs in inference mode.
pub trait TrainableModel<S> {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn loss_and_grads(&self, sample: &S, rng: &mut ChaCha8Rng) -> (f64, ParamSet);
    fn loss(&self, sample: &S) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
        }
    }
}

/// Per-epoch mean losses; `dev_loss` is empty when no dev data was given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub dev_loss: Vec<f64>,
}

/// Deterministic mini-batch training with Adam.
pub fn train<S, M: TrainableModel<S>>(
    model: &mut M,
    train_data: &[S],
    dev_data: &[S],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if train_data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::with_betas(cfg.lr, cfg.beta1, cfg.beta2);
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        dev_loss: Vec::new(),
    };
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.params().zeros_like();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let (loss, g) = model.loss_and_grads(&train_data[idx], &mut rng);
                batch_loss += loss;
                grads.axpy(&g, 1.0);
            }
            grads.scale(1.0 / batch.len() as f64);
            epoch_loss += batch_loss;
            adam.step(model.params_mut(), &grads);
        }
        report.train_loss.push(epoch_loss / train_data.len() as f64);
        if !dev_data.is_empty() {
            let dev: f64 =
                dev_data.iter().map(|s| model.loss(s)).sum::<f64>() / dev_data.len() as f64;
            report.dev_loss.push(dev);
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Per-tensor relative errors between analytic and central finite-difference
/// gradients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub per_tensor: BTreeMap<String, f64>,
    pub max_rel_error: f64,
}

/// Central differences at step `h` on every component of every tensor in
/// `analytic`. The relative error per tensor is ||a - n|| / max(||a||, ||n||,
/// 1e-12) over the flattened tensor.
pub fn gradient_check<F>(
    params: &ParamSet,
    analytic: &ParamSet,
    h: f64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&ParamSet) -> f64,
{
    let mut work = params.clone();
    let mut per_tensor = BTreeMap::new();
    let mut max_rel = 0.0f64;
    let names: Vec<String> = analytic.names().map(|s| s.to_string()).collect();
    for name in names {
        let len = analytic.get(&name).len();
        let mut numeric = vec![0.0; len];
        for k in 0..len {
            let orig = work.get(&name).data[k];
            work.get_mut(&name).data[k] = orig + h;
            let up = loss(&work);
            work.get_mut(&name).data[k] = orig - h;
            let down = loss(&work);
            work.get_mut(&name).data[k] = orig;
            numeric[k] = (up - down) / (2.0 * h);
        }
        let a = &analytic.get(&name).data;
        let diff: f64 = a
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = diff / na.max(nn).max(1e-12);
        max_rel = max_rel.max(rel);
        per_tensor.insert(name, rel);
    }
    GradCheckReport {
        per_tensor,
        max_rel_error: max_rel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    #[should_panic(expected = "does not match data length")]
    fn tensor_shape_mismatch_panics() {
        let _ = Tensor::from_vec(&[2, 3], vec![1.0; 5]);
    }

    #[test]
    fn dense_identity_and_bias() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::zeros(&[2]);
        assert_eq!(dense_forward(&[3.0, -1.0], &w, &b), vec![3.0, -1.0]);
        let b = Tensor::from_vec(&[2], vec![0.5, -0.5]);
        assert_eq!(dense_forward(&[0.0, 0.0], &w, &b), vec![0.5, -0.5]);
    }

    #[test]
    fn conv_identity_kernel_reproduces_input() {
        let x = Tensor::from_vec(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]);
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b, 1);
        assert_eq!(y.shape, vec![1, 2, 3]);
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn conv_zero_input_yields_bias_maps() {
        let x = Tensor::zeros(&[1, 4, 4]);
        let w = Tensor::from_vec(&[2, 1, 3, 3], vec![0.3; 18]);
        let b = Tensor::from_vec(&[2], vec![1.5, -2.0]);
        let y = conv2d_forward(&x, &w, &b, 1);
        assert_eq!(y.shape, vec![2, 2, 2]);
        assert!(y.data[..4].iter().all(|&v| v == 1.5));
        assert!(y.data[4..].iter().all(|&v| v == -2.0));
    }

    #[test]
    fn max_pool_takes_block_maxima_and_truncates() {
        let x = Tensor::from_vec(
            &[1, 2, 4],
            vec![1.0, 5.0, 2.0, 0.0, 3.0, -1.0, 8.0, 4.0],
        );
        let (y, argmax) = max_pool2_forward(&x);
        assert_eq!(y.shape, vec![1, 1, 2]);
        assert_eq!(y.data, vec![5.0, 8.0]);
        assert_eq!(argmax, vec![1, 6]);

        let odd = Tensor::from_vec(&[1, 3, 3], (0..9).map(|v| v as f64).collect());
        let (y, _) = max_pool2_forward(&odd);
        assert_eq!(y.shape, vec![1, 1, 1]);
        assert_eq!(y.data, vec![4.0]);
    }

    #[test]
    fn lstm_zero_params_give_zero_state() {
        let w = Tensor::zeros(&[8, 3]);
        let u = Tensor::zeros(&[8, 2]);
        let b = Tensor::zeros(&[8]);
        let p = LstmParams { w: &w, u: &u, b: &b };
        let (h, c) = lstm_step(&[1.0, -2.0, 0.5], &[0.0, 0.0], &[0.0, 0.0], p);
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_gates_copy_the_cell_state() {
        // f-gate bias +20 (forget ~1), i-gate bias -20 (input ~0): c_t ~ c_prev.
        let hidden = 2;
        let w = Tensor::zeros(&[4 * hidden, 3]);
        let u = Tensor::zeros(&[4 * hidden, hidden]);
        let mut b = Tensor::zeros(&[4 * hidden]);
        for k in 0..hidden {
            b.data[k] = -20.0;
            b.data[hidden + k] = 20.0;
        }
        let p = LstmParams { w: &w, u: &u, b: &b };
        let c_prev = vec![0.7, -0.3];
        let (h, c) = lstm_step(&[1.0, 1.0, 1.0], &[0.1, 0.2], &c_prev, p);
        for (a, b) in c.iter().zip(&c_prev) {
            assert!((a - b).abs() < 1e-6, "{c:?}");
        }
        for (hk, ck) in h.iter().zip(&c) {
            assert!((hk - 0.5 * ck.tanh()).abs() < 1e-6);
        }
    }

    fn random_lstm_params(hidden: usize, input: usize, seed: u64) -> (Tensor, Tensor, Tensor) {
        let mut r = rng(seed);
        (
            Tensor::uniform(&[4 * hidden, input], 0.5, &mut r),
            Tensor::uniform(&[4 * hidden, hidden], 0.5, &mut r),
            Tensor::uniform(&[4 * hidden], 0.2, &mut r),
        )
    }

    #[test]
    fn bilstm_length_one_state_equals_token_state() {
        let (wf, uf, bf) = random_lstm_params(3, 2, 1);
        let (wb, ub, bb) = random_lstm_params(3, 2, 2);
        let fwd = LstmParams { w: &wf, u: &uf, b: &bf };
        let bwd = LstmParams { w: &wb, u: &ub, b: &bb };
        let (s, a, _) = bilstm_forward(&[vec![0.3, -0.8]], fwd, bwd).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0], s);
        assert_eq!(s.len(), 6);
    }

    #[test]
    fn bilstm_reversal_swaps_state_halves() {
        let (wf, uf, bf) = random_lstm_params(3, 2, 3);
        let fwd = LstmParams { w: &wf, u: &uf, b: &bf };
        // Same parameters in both directions so the swap is exact.
        let seq: Vec<Vec<f64>> = vec![vec![0.1, 0.2], vec![-0.5, 0.7], vec![0.9, -0.1]];
        let mut rev = seq.clone();
        rev.reverse();
        let (s1, a1, _) = bilstm_forward(&seq, fwd, fwd).unwrap();
        let (s2, a2, _) = bilstm_forward(&rev, fwd, fwd).unwrap();
        let h = 3;
        assert_eq!(a1.len(), 3);
        assert_eq!(a2.len(), 3);
        for k in 0..h {
            assert!((s1[k] - s2[h + k]).abs() < 1e-12);
            assert!((s1[h + k] - s2[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn bilstm_rejects_empty_sequence() {
        let (w, u, b) = random_lstm_params(2, 2, 4);
        let p = LstmParams { w: &w, u: &u, b: &b };
        assert!(bilstm_forward(&[], p, p).is_err());
    }

    #[test]
    fn softmax_is_a_distribution_even_for_large_inputs() {
        let w = softmax(&[1000.0, 1000.0, 999.0]);
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(w.iter().all(|&v| v >= 0.0));
        assert!((w[0] - w[1]).abs() < 1e-12);
    }

    fn small_attention_params(dim_a: usize, dim_s: usize, dim_m: usize, seed: u64) -> ParamSet {
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        p.insert("w_aa", Tensor::uniform(&[dim_a], 0.5, &mut r));
        p.insert("w_sa", Tensor::uniform(&[dim_s], 0.5, &mut r));
        p.insert("w_sm", Tensor::uniform(&[dim_m, dim_s], 0.5, &mut r));
        p.insert("w_rm", Tensor::uniform(&[dim_m, dim_a], 0.5, &mut r));
        p.insert("b", Tensor::uniform(&[dim_m], 0.2, &mut r));
        p
    }

    fn attention_view(p: &ParamSet) -> AttentionParams<'_> {
        AttentionParams {
            w_aa: p.get("w_aa"),
            w_sa: p.get("w_sa"),
            w_sm: p.get("w_sm"),
            w_rm: p.get("w_rm"),
            b: p.get("b"),
        }
    }

    #[test]
    fn equal_alignment_scores_give_uniform_weights() {
        let mut p = small_attention_params(3, 2, 2, 5);
        p.insert("w_aa", Tensor::zeros(&[3]));
        let a = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let (_, cache) = attention_forward(&[0.4, -0.2], &a, attention_view(&p)).unwrap();
        for &w in cache.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_weights_give_zero_m() {
        let mut p = small_attention_params(3, 2, 2, 6);
        p.insert("w_sm", Tensor::zeros(&[2, 2]));
        p.insert("w_rm", Tensor::zeros(&[2, 3]));
        p.insert("b", Tensor::zeros(&[2]));
        let a = vec![vec![0.5, 0.1, -0.2]];
        let (m, _) = attention_forward(&[0.4, -0.2], &a, attention_view(&p)).unwrap();
        assert_eq!(m, vec![0.0, 0.0]);
    }

    #[test]
    fn attention_rejects_empty_states() {
        let p = small_attention_params(3, 2, 2, 7);
        assert!(attention_forward(&[0.4, -0.2], &[], attention_view(&p)).is_err());
    }

    #[test]
    fn losses_match_hand_values() {
        let (l, g) = mse_loss(&[1.0, 2.0], &[0.0, 4.0]);
        assert!((l - (1.0 + 4.0) / 2.0).abs() < 1e-12);
        assert_eq!(g, vec![1.0, -2.0]);

        let (l, g) = bce_with_logits(0.0, 1.0);
        assert!((l - 2.0f64.ln()).abs() < 1e-12);
        assert!((g - (-0.5)).abs() < 1e-12);
        let (l, _) = bce_with_logits(50.0, 1.0);
        assert!(l < 1e-20);
    }

    #[test]
    fn adam_with_zero_lr_changes_nothing() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::from_vec(&[2], vec![1.0, -2.0]));
        let before = params.clone();
        let mut grads = ParamSet::new();
        grads.insert("w", Tensor::from_vec(&[2], vec![5.0, 5.0]));
        let mut adam = Adam::new(0.0);
        for _ in 0..10 {
            adam.step(&mut params, &grads);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut params = ParamSet::new();
        params.insert("x", Tensor::from_vec(&[1], vec![0.0]));
        let mut adam = Adam::new(0.05);
        for _ in 0..2000 {
            let x = params.get("x").data[0];
            let mut grads = ParamSet::new();
            grads.insert("x", Tensor::from_vec(&[1], vec![2.0 * (x - 3.0)]));
            adam.step(&mut params, &grads);
        }
        assert!((params.get("x").data[0] - 3.0).abs() < 1e-3);
    }

    struct TinyDense {
        params: ParamSet,
    }

    impl TinyDense {
        fn new(seed: u64) -> Self {
            let mut r = rng(seed);
            let mut params = ParamSet::new();
            params.insert("w", Tensor::uniform(&[1, 2], 0.5, &mut r));
            params.insert("b", Tensor::zeros(&[1]));
            TinyDense { params }
        }

        fn predict(&self, x: &[f64]) -> f64 {
            dense_forward(x, self.params.get("w"), self.params.get("b"))[0]
        }
    }

    impl TrainableModel<(Vec<f64>, f64)> for TinyDense {
        fn params(&self) -> &ParamSet {
            &self.params
        }
        fn params_mut(&mut self) -> &mut ParamSet {
            &mut self.params
        }
        fn loss_and_grads(
            &self,
            sample: &(Vec<f64>, f64),
            _rng: &mut ChaCha8Rng,
        ) -> (f64, ParamSet) {
            let pred = self.predict(&sample.0);
            let (loss, grad) = mse_loss(&[pred], &[sample.1]);
            let (_, gw, gb) = dense_backward(&sample.0, self.params.get("w"), &grad);
            let mut grads = ParamSet::new();
            grads.insert("w", gw);
            grads.insert("b", gb);
            (loss, grads)
        }
        fn loss(&self, sample: &(Vec<f64>, f64)) -> f64 {
            let pred = self.predict(&sample.0);
            mse_loss(&[pred], &[sample.1]).0
        }
    }

    #[test]
    fn single_sample_overfit_drives_mse_below_1e6th() {
        let mut model = TinyDense::new(8);
        let data = vec![(vec![0.5, -1.0], 2.0)];
        let cfg = TrainConfig {
            epochs: 500,
            batch_size: 1,
            lr: 0.05,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &data, &[], &cfg).unwrap();
        assert!(report.train_loss.len() == 500);
        assert!(*report.train_loss.last().unwrap() < 1e-6);
        assert!(report.dev_loss.is_empty());
    }

    #[test]
    fn same_seed_reproduces_loss_history() {
        let data: Vec<(Vec<f64>, f64)> = (0..10)
            .map(|i| (vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0], i as f64 / 5.0))
            .collect();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 4,
            lr: 0.01,
            seed: 77,
            ..TrainConfig::default()
        };
        let mut m1 = TinyDense::new(8);
        let r1 = train(&mut m1, &data, &data[..3], &cfg).unwrap();
        let mut m2 = TinyDense::new(8);
        let r2 = train(&mut m2, &data, &data[..3], &cfg).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1.params, m2.params);
        assert_eq!(r1.dev_loss.len(), 20);
    }

    #[test]
    fn gradient_check_accepts_linear_layer_and_rejects_corruption() {
        let mut r = rng(9);
        let mut params = ParamSet::new();
        params.insert("w", Tensor::uniform(&[2, 3], 0.5, &mut r));
        params.insert("b", Tensor::uniform(&[2], 0.5, &mut r));
        let x = vec![0.3, -0.7, 0.2];
        let target = vec![0.5, -0.5];
        let loss_fn = |p: &ParamSet| -> f64 {
            let y = dense_forward(&x, p.get("w"), p.get("b"));
            mse_loss(&y, &target).0
        };
        let y = dense_forward(&x, params.get("w"), params.get("b"));
        let (_, grad_y) = mse_loss(&y, &target);
        let (_, gw, gb) = dense_backward(&x, params.get("w"), &grad_y);
        let mut analytic = ParamSet::new();
        analytic.insert("w", gw.clone());
        analytic.insert("b", gb);
        let report = gradient_check(&params, &analytic, GRAD_CHECK_H, loss_fn);
        assert!(report.max_rel_error < 1e-7, "{report:?}");

        let mut corrupted = ParamSet::new();
        let mut bad = gw;
        bad.data[0] += 1.0;
        corrupted.insert("w", bad);
        let report = gradient_check(&params, &corrupted, GRAD_CHECK_H, loss_fn);
        // Same loss function, wrong analytic gradient: the check must flag it.
        assert!(report.max_rel_error > 1e-2, "{report:?}");
    }

    #[test]
    fn dropout_masks_scale_survivors() {
        let mut r = rng(10);
        let x = vec![1.0; 1000];
        let (y, mask) = dropout_forward(&x, 0.2, &mut r);
        let kept = mask.iter().filter(|&&m| m > 0.0).count();
        assert!((kept as f64 - 800.0).abs() < 60.0, "kept {kept}");
        for (v, m) in y.iter().zip(&mask) {
            assert_eq!(v, m);
        }
        let (y, mask) = dropout_forward(&x, 0.0, &mut r);
        assert_eq!(y, x);
        assert!(mask.iter().all(|&m| m == 1.0));
    }
}
