//! Hierarchical two-stage convolutional classifier.
//!
//! Each stage is a small DeepConvNet-style network
//! (temporal conv → spatial conv → ELU/max-pool → conv blocks → dense → 2
//! logits) with its own parameters. Stage A separates non-target from
//! target, stage B true from error target, and the three-class output is
//! `(a0, a1·b0, a1·b1)`. Both stages train jointly through the cross-entropy
//! of that composed distribution.
//!
//! Parameters live in one flat `Vec<f64>` per stage; [`Layout`] maps layer
//! tensors onto offsets in it. Gradients are derived by hand and checked
//! against central differences in the tests.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::format::{read_exact, read_f64, read_u32, read_u64};
use crate::rng::{substream, substream_indexed, Stream};
use crate::types::{ClassId, Epoch};

/// Probabilities below this are clamped before taking the log.
pub const LOSS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub n_channels: usize,
    pub window_len: usize,
    pub temporal_filters: usize,
    pub deep_filters: Vec<usize>,
    pub kernel_len: usize,
    pub pool_len: usize,
    pub dropout_rate: f64,
    pub dense_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n_channels: 32,
            window_len: 250,
            temporal_filters: 8,
            deep_filters: vec![8, 16],
            kernel_len: 10,
            pool_len: 3,
            dropout_rate: 0.1,
            dense_hidden: 32,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.n_channels,
            self.window_len,
            self.temporal_filters,
            self.kernel_len,
            self.pool_len,
            self.dense_hidden,
        ];
        if positive.contains(&0) || self.deep_filters.contains(&0) {
            return Err(Error::Invalid("network sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Invalid(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        let mut len = self.window_len;
        for stage in 0..=self.deep_filters.len() {
            if len < self.kernel_len || (len - self.kernel_len + 1) / self.pool_len == 0 {
                return Err(Error::Invalid(format!(
                    "temporal dimension collapses at conv stage {stage} (length {len})"
                )));
            }
            len = (len - self.kernel_len + 1) / self.pool_len;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BlockLayout {
    in_ch: usize,
    out_ch: usize,
    in_len: usize,
    conv_len: usize,
    out_len: usize,
    w: usize,
    b: usize,
}

/// Offsets of every layer tensor inside a stage's flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    channels: usize,
    window: usize,
    f1: usize,
    k: usize,
    pool: usize,
    conv0_len: usize,
    pool0_len: usize,
    blocks: Vec<BlockLayout>,
    flat: usize,
    hidden: usize,
    wt: usize,
    ws: usize,
    bs: usize,
    d1w: usize,
    d1b: usize,
    d2w: usize,
    d2b: usize,
    total: usize,
}

impl Layout {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let (c, f1, k, p) = (
            cfg.n_channels,
            cfg.temporal_filters,
            cfg.kernel_len,
            cfg.pool_len,
        );
        let mut off = 0;
        let mut take = |n: usize| {
            let at = off;
            off += n;
            at
        };
        let wt = take(f1 * k);
        let ws = take(f1 * f1 * c);
        let bs = take(f1);
        let conv0_len = cfg.window_len - k + 1;
        let pool0_len = conv0_len / p;
        let mut blocks = Vec::new();
        let (mut in_ch, mut in_len) = (f1, pool0_len);
        for &out_ch in &cfg.deep_filters {
            let conv_len = in_len - k + 1;
            let w = take(out_ch * in_ch * k);
            let b = take(out_ch);
            blocks.push(BlockLayout {
                in_ch,
                out_ch,
                in_len,
                conv_len,
                out_len: conv_len / p,
                w,
                b,
            });
            in_ch = out_ch;
            in_len = conv_len / p;
        }
        let flat = in_ch * in_len;
        let hidden = cfg.dense_hidden;
        let d1w = take(hidden * flat);
        let d1b = take(hidden);
        let d2w = take(2 * hidden);
        let d2b = take(2);
        Ok(Self {
            channels: c,
            window: cfg.window_len,
            f1,
            k,
            pool: p,
            conv0_len,
            pool0_len,
            blocks,
            flat,
            hidden,
            wt,
            ws,
            bs,
            d1w,
            d1b,
            d2w,
            d2b,
            total: off,
        })
    }

    pub fn n_params(&self) -> usize {
        self.total
    }

    /// Number of spatial filter rows (`temporal_filters²`).
    pub fn spatial_rows(&self) -> usize {
        self.f1 * self.f1
    }

    /// Flat index of the spatial weight for filter row `fg` and channel `c`.
    pub fn spatial_index(&self, fg: usize, c: usize) -> usize {
        self.ws + fg * self.channels + c
    }

    /// (offset, len, fan_in) of each tensor, used for initialization.
    fn tensors(&self) -> Vec<(usize, usize, usize)> {
        let mut v = vec![
            (self.wt, self.f1 * self.k, self.k),
            (
                self.ws,
                self.f1 * self.f1 * self.channels,
                self.f1 * self.channels,
            ),
            (self.bs, self.f1, self.f1 * self.channels),
        ];
        for b in &self.blocks {
            v.push((b.w, b.out_ch * b.in_ch * self.k, b.in_ch * self.k));
            v.push((b.b, b.out_ch, b.in_ch * self.k));
        }
        v.push((self.d1w, self.hidden * self.flat, self.flat));
        v.push((self.d1b, self.hidden, self.flat));
        v.push((self.d2w, 2 * self.hidden, self.hidden));
        v.push((self.d2b, 2, self.hidden));
        v
    }

    /// Number of parameters in closed form from the config.
    pub fn count(cfg: &NetConfig) -> Result<usize> {
        Ok(Self::new(cfg)?.total)
    }
}

/// Parameters of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageNet {
    pub params: Vec<f64>,
}

impl StageNet {
    fn init(layout: &Layout, rng: &mut impl Rng) -> Self {
        let mut params = vec![0.0; layout.total];
        for (off, len, fan_in) in layout.tensors() {
            let s = (1.0 / fan_in as f64).sqrt();
            for p in &mut params[off..off + len] {
                *p = rng.random_range(-s..s);
            }
        }
        Self { params }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel {
    pub stage_a: StageNet,
    pub stage_b: StageNet,
    config: NetConfig,
    layout: Layout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub stage_a: Vec<f64>,
    pub stage_b: Vec<f64>,
}

impl Gradients {
    fn zeros(n: usize) -> Self {
        Self {
            stage_a: vec![0.0; n],
            stage_b: vec![0.0; n],
        }
    }

    fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.stage_a.iter_mut().zip(&other.stage_a) {
            *a += b;
        }
        for (a, b) in self.stage_b.iter_mut().zip(&other.stage_b) {
            *a += b;
        }
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// ELU derivative expressed through the activation value.
fn elu_grad(pre: f64, act: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        act + 1.0
    }
}

fn softmax2(l: [f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let e0 = (l[0] - m).exp();
    let e1 = (l[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Composes the stage outputs into a three-class distribution.
pub fn compose(a: [f64; 2], b: [f64; 2]) -> [f64; 3] {
    [a[0], a[1] * b[0], a[1] * b[1]]
}

/// Cross-entropy of the composed distribution with a one-hot label.
pub fn loss(probs: &[f64; 3], label: ClassId) -> f64 {
    -probs[label.index()].max(LOSS_EPS).ln()
}

/// Argmax with ties resolved to the lowest class index.
pub fn argmax3(probs: &[f64; 3]) -> ClassId {
    let mut best = 0;
    for i in 1..3 {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    ClassId::ALL[best]
}

/// Per-channel z-score over the window; rows with std < 1e-9 become zero.
pub fn standardize<T: Copy + Into<f64>>(data: ArrayView2<T>) -> Array2<f64> {
    let mut out = data.mapv(|v| v.into());
    for mut row in out.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < 1e-9 {
            row.fill(0.0);
        } else {
            row.mapv_inplace(|v| (v - mean) / std);
        }
    }
    out
}

/// Inverted-dropout mask; `None` when dropout is inactive.
fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: Option<&mut R>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(
        (0..n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect(),
    )
}

fn apply_mask(x: &[f64], mask: &Option<Vec<f64>>) -> Vec<f64> {
    match mask {
        Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => x.to_vec(),
    }
}

fn max_pool(act: &[f64], ch: usize, len: usize, pool: usize) -> (Vec<f64>, Vec<usize>) {
    let out_len = len / pool;
    let mut out = Vec::with_capacity(ch * out_len);
    let mut idx = Vec::with_capacity(ch * out_len);
    for c in 0..ch {
        for j in 0..out_len {
            let base = c * len + j * pool;
            let mut best = base;
            for i in base + 1..base + pool {
                if act[i] > act[best] {
                    best = i;
                }
            }
            out.push(act[best]);
            idx.push(best);
        }
    }
    (out, idx)
}

/// Valid 1-D convolution (cross-correlation), `w` laid out `[out][in][k]`.
fn conv1d(
    input: &[f64],
    in_ch: usize,
    in_len: usize,
    w: &[f64],
    bias: &[f64],
    out_ch: usize,
    k: usize,
) -> Vec<f64> {
    let out_len = in_len - k + 1;
    let mut out = vec![0.0; out_ch * out_len];
    for o in 0..out_ch {
        let dst = &mut out[o * out_len..(o + 1) * out_len];
        dst.fill(bias[o]);
        for i in 0..in_ch {
            let src = &input[i * in_len..(i + 1) * in_len];
            for kk in 0..k {
                let wv = w[(o * in_ch + i) * k + kk];
                for (d, s) in dst.iter_mut().zip(&src[kk..kk + out_len]) {
                    *d += wv * s;
                }
            }
        }
    }
    out
}

struct BlockCache {
    input: Vec<f64>,
    mask: Option<Vec<f64>>,
    pre: Vec<f64>,
    act: Vec<f64>,
    pool_idx: Vec<usize>,
}

struct StageCache {
    z: Vec<f64>,
    h: Vec<f64>,
    h_act: Vec<f64>,
    pool0_idx: Vec<usize>,
    blocks: Vec<BlockCache>,
    flat_mask: Option<Vec<f64>>,
    flat_in: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: [f64; 2],
}

fn stage_forward<R: Rng + ?Sized>(
    lay: &Layout,
    p: &[f64],
    x: &[f64],
    dropout: f64,
    mut rng: Option<&mut R>,
) -> StageCache {
    let (c, t, f1, k) = (lay.channels, lay.window, lay.f1, lay.k);

    // spatial projection first: z[f][g] = sum_c ws[f][g][c] x[c]
    let ws = &p[lay.ws..lay.ws + f1 * f1 * c];
    let mut z = vec![0.0; f1 * f1 * t];
    for fg in 0..f1 * f1 {
        let dst = &mut z[fg * t..(fg + 1) * t];
        for ch in 0..c {
            let w = ws[fg * c + ch];
            for (d, s) in dst.iter_mut().zip(&x[ch * t..(ch + 1) * t]) {
                *d += w * s;
            }
        }
    }
    // then the temporal kernel of each input map g, summed over g
    let wt = &p[lay.wt..lay.wt + f1 * k];
    let n0 = lay.conv0_len;
    let mut h = vec![0.0; f1 * n0];
    for f in 0..f1 {
        let dst = &mut h[f * n0..(f + 1) * n0];
        dst.fill(p[lay.bs + f]);
        for g in 0..f1 {
            let src = &z[(f * f1 + g) * t..(f * f1 + g + 1) * t];
            for kk in 0..k {
                let w = wt[g * k + kk];
                for (d, s) in dst.iter_mut().zip(&src[kk..kk + n0]) {
                    *d += w * s;
                }
            }
        }
    }
    let h_act: Vec<f64> = h.iter().map(|&v| elu(v)).collect();
    let (mut cur, pool0_idx) = max_pool(&h_act, f1, n0, lay.pool);

    let mut blocks = Vec::with_capacity(lay.blocks.len());
    for b in &lay.blocks {
        let mask = dropout_mask(cur.len(), dropout, rng.as_deref_mut());
        let input = apply_mask(&cur, &mask);
        let pre = conv1d(
            &input,
            b.in_ch,
            b.in_len,
            &p[b.w..b.b],
            &p[b.b..b.b + b.out_ch],
            b.out_ch,
            k,
        );
        let act: Vec<f64> = pre.iter().map(|&v| elu(v)).collect();
        let (pooled, pool_idx) = max_pool(&act, b.out_ch, b.conv_len, lay.pool);
        blocks.push(BlockCache {
            input,
            mask,
            pre,
            act,
            pool_idx,
        });
        cur = pooled;
    }

    let flat_mask = dropout_mask(cur.len(), dropout, rng);
    let flat_in = apply_mask(&cur, &flat_mask);
    let (nh, nf) = (lay.hidden, lay.flat);
    let mut hidden_pre = p[lay.d1b..lay.d1b + nh].to_vec();
    for (j, hp) in hidden_pre.iter_mut().enumerate() {
        let row = &p[lay.d1w + j * nf..lay.d1w + (j + 1) * nf];
        *hp += row.iter().zip(&flat_in).map(|(a, b)| a * b).sum::<f64>();
    }
    let hidden: Vec<f64> = hidden_pre.iter().map(|&v| elu(v)).collect();
    let mut logits = [p[lay.d2b], p[lay.d2b + 1]];
    for (o, l) in logits.iter_mut().enumerate() {
        let row = &p[lay.d2w + o * nh..lay.d2w + (o + 1) * nh];
        *l += row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
    }
    StageCache {
        z,
        h,
        h_act,
        pool0_idx,
        blocks,
        flat_mask,
        flat_in,
        hidden_pre,
        hidden,
        logits,
    }
}

/// Backpropagates `dlogits` through one stage, accumulating into `grad`.
/// Returns the input gradient when `want_input` is set.
fn stage_backward(
    lay: &Layout,
    p: &[f64],
    x: &[f64],
    cache: &StageCache,
    dlogits: [f64; 2],
    grad: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let (c, t, f1, k) = (lay.channels, lay.window, lay.f1, lay.k);
    let (nh, nf) = (lay.hidden, lay.flat);

    grad[lay.d2b] += dlogits[0];
    grad[lay.d2b + 1] += dlogits[1];
    let mut dhidden = vec![0.0; nh];
    for o in 0..2 {
        for j in 0..nh {
            grad[lay.d2w + o * nh + j] += dlogits[o] * cache.hidden[j];
            dhidden[j] += p[lay.d2w + o * nh + j] * dlogits[o];
        }
    }
    let mut dflat = vec![0.0; nf];
    for j in 0..nh {
        let dh = dhidden[j] * elu_grad(cache.hidden_pre[j], cache.hidden[j]);
        if dh == 0.0 {
            continue;
        }
        grad[lay.d1b + j] += dh;
        let wrow = &p[lay.d1w + j * nf..lay.d1w + (j + 1) * nf];
        let grow = &mut grad[lay.d1w + j * nf..lay.d1w + (j + 1) * nf];
        for i in 0..nf {
            grow[i] += dh * cache.flat_in[i];
            dflat[i] += wrow[i] * dh;
        }
    }
    if let Some(m) = &cache.flat_mask {
        for (d, mv) in dflat.iter_mut().zip(m) {
            *d *= mv;
        }
    }

    let mut dcur = dflat;
    for (b, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
        let mut dpre = vec![0.0; b.out_ch * b.conv_len];
        for (j, &src) in bc.pool_idx.iter().enumerate() {
            dpre[src] += dcur[j];
        }
        for (i, d) in dpre.iter_mut().enumerate() {
            *d *= elu_grad(bc.pre[i], bc.act[i]);
        }
        let mut dinput = vec![0.0; b.in_ch * b.in_len];
        for o in 0..b.out_ch {
            let dout = &dpre[o * b.conv_len..(o + 1) * b.conv_len];
            grad[b.b + o] += dout.iter().sum::<f64>();
            for i in 0..b.in_ch {
                let src = &bc.input[i * b.in_len..(i + 1) * b.in_len];
                let dsrc = &mut dinput[i * b.in_len..(i + 1) * b.in_len];
                for kk in 0..k {
                    let widx = b.w + (o * b.in_ch + i) * k + kk;
                    let wv = p[widx];
                    let mut acc = 0.0;
                    for (tt, &d) in dout.iter().enumerate() {
                        acc += d * src[tt + kk];
                        dsrc[tt + kk] += wv * d;
                    }
                    grad[widx] += acc;
                }
            }
        }
        if let Some(m) = &bc.mask {
            for (d, mv) in dinput.iter_mut().zip(m) {
                *d *= mv;
            }
        }
        dcur = dinput;
    }

    let n0 = lay.conv0_len;
    let mut dh = vec![0.0; f1 * n0];
    for (j, &src) in cache.pool0_idx.iter().enumerate() {
        dh[src] += dcur[j];
    }
    for (i, d) in dh.iter_mut().enumerate() {
        *d *= elu_grad(cache.h[i], cache.h_act[i]);
    }
    let mut dz = vec![0.0; f1 * f1 * t];
    for f in 0..f1 {
        let dout = &dh[f * n0..(f + 1) * n0];
        grad[lay.bs + f] += dout.iter().sum::<f64>();
        for g in 0..f1 {
            let zrow = &cache.z[(f * f1 + g) * t..(f * f1 + g + 1) * t];
            let dzrow = &mut dz[(f * f1 + g) * t..(f * f1 + g + 1) * t];
            for kk in 0..k {
                let widx = lay.wt + g * k + kk;
                let wv = p[widx];
                let mut acc = 0.0;
                for (tt, &d) in dout.iter().enumerate() {
                    acc += d * zrow[tt + kk];
                    dzrow[tt + kk] += wv * d;
                }
                grad[widx] += acc;
            }
        }
    }
    let mut dx = if want_input {
        Some(vec![0.0; c * t])
    } else {
        None
    };
    for fg in 0..f1 * f1 {
        let dzrow = &dz[fg * t..(fg + 1) * t];
        for ch in 0..c {
            let xrow = &x[ch * t..(ch + 1) * t];
            grad[lay.ws + fg * c + ch] += dzrow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
            if let Some(dx) = dx.as_mut() {
                let w = p[lay.ws + fg * c + ch];
                for (d, g) in dx[ch * t..(ch + 1) * t].iter_mut().zip(dzrow) {
                    *d += w * g;
                }
            }
        }
    }
    dx
}

/// Result of one backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    pub probs: [f64; 3],
    pub grads: Gradients,
    pub input_grad: Option<Array2<f64>>,
    /// The label's probability fell below [`LOSS_EPS`] and was clamped.
    pub clamped: bool,
}

impl HierarchicalModel {
    /// Fresh model with uniform(±sqrt(1/fan_in)) weights from `seed`.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        let layout = Layout::new(&config)?;
        let stage_a = StageNet::init(&layout, &mut substream_indexed(seed, Stream::Init, 0));
        let stage_b = StageNet::init(&layout, &mut substream_indexed(seed, Stream::Init, 1));
        Ok(Self {
            stage_a,
            stage_b,
            config,
            layout,
        })
    }

    pub fn from_parts(config: NetConfig, stage_a: StageNet, stage_b: StageNet) -> Result<Self> {
        let layout = Layout::new(&config)?;
        for (name, s) in [("stage_a", &stage_a), ("stage_b", &stage_b)] {
            if s.params.len() != layout.total {
                return Err(Error::Dimension {
                    expected: format!("{} {name} parameters", layout.total),
                    got: s.params.len().to_string(),
                });
            }
        }
        Ok(Self {
            stage_a,
            stage_b,
            config,
            layout,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        2 * self.layout.total
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        let want = (self.config.n_channels, self.config.window_len);
        if x.dim() != want {
            return Err(Error::Dimension {
                expected: format!("{want:?}"),
                got: format!("{:?}", x.dim()),
            });
        }
        Ok(())
    }

    fn contiguous(x: ArrayView2<f64>) -> Vec<f64> {
        x.as_standard_layout().iter().copied().collect()
    }

    /// Composed probabilities. `dropout_rng` enables train-mode dropout.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<f64>,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<[f64; 3]> {
        self.check_input(&x)?;
        let xs = Self::contiguous(x);
        let rate = self.config.dropout_rate;
        let a = stage_forward(
            &self.layout,
            &self.stage_a.params,
            &xs,
            rate,
            dropout_rng.as_deref_mut(),
        );
        let b = stage_forward(&self.layout, &self.stage_b.params, &xs, rate, dropout_rng);
        Ok(compose(softmax2(a.logits), softmax2(b.logits)))
    }

    /// Eval-mode probabilities.
    pub fn probs(&self, x: ArrayView2<f64>) -> Result<[f64; 3]> {
        self.forward::<ChaCha8Rng>(x, None)
    }

    /// Class (lowest index wins ties) and probabilities, dropout off.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<(ClassId, [f64; 3])> {
        let p = self.probs(x)?;
        Ok((argmax3(&p), p))
    }

    /// Loss and exact gradients for one standardized window.
    pub fn backward<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<f64>,
        label: ClassId,
        mut dropout_rng: Option<&mut R>,
        want_input_grad: bool,
    ) -> Result<Backward> {
        self.check_input(&x)?;
        let xs = Self::contiguous(x);
        let lay = &self.layout;
        let rate = self.config.dropout_rate;
        let ca = stage_forward(
            lay,
            &self.stage_a.params,
            &xs,
            rate,
            dropout_rng.as_deref_mut(),
        );
        let cb = stage_forward(lay, &self.stage_b.params, &xs, rate, dropout_rng);
        let (a, b) = (softmax2(ca.logits), softmax2(cb.logits));
        let probs = compose(a, b);
        let loss_value = loss(&probs, label);
        let clamped = probs[label.index()] < LOSS_EPS;

        // -log p[y] splits into -log a[.] - log b[.]; softmax-CE gradients
        let (da, db) = if clamped {
            ([0.0; 2], [0.0; 2])
        } else {
            match label {
                ClassId::NonTarget => ([a[0] - 1.0, a[1]], [0.0, 0.0]),
                ClassId::TrueTarget => ([a[0], a[1] - 1.0], [b[0] - 1.0, b[1]]),
                ClassId::ErrorTarget => ([a[0], a[1] - 1.0], [b[0], b[1] - 1.0]),
            }
        };
        let mut grads = Gradients::zeros(lay.total);
        let dxa = stage_backward(
            lay,
            &self.stage_a.params,
            &xs,
            &ca,
            da,
            &mut grads.stage_a,
            want_input_grad,
        );
        let dxb = stage_backward(
            lay,
            &self.stage_b.params,
            &xs,
            &cb,
            db,
            &mut grads.stage_b,
            want_input_grad,
        );
        let input_grad = match (dxa, dxb) {
            (Some(ga), Some(gb)) => {
                let sum: Vec<f64> = ga.iter().zip(&gb).map(|(p, q)| p + q).collect();
                Some(
                    Array2::from_shape_vec((lay.channels, lay.window), sum)
                        .expect("input grad shape"),
                )
            }
            _ => None,
        };
        Ok(Backward {
            loss: loss_value,
            probs,
            grads,
            input_grad,
            clamped,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 0.001,
            weight_decay: 0.0001,
            epochs: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Invalid(
                "batch_size and epochs must be at least 1".into(),
            ));
        }
        let rates = [self.learning_rate, self.weight_decay, self.adam_eps];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Invalid(
                "learning rate, weight decay and eps must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Invalid("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// Decoupled weight decay followed by the bias-corrected Adam step.
    fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(self.step);
        let bc2 = 1.0 - cfg.adam_beta2.powi(self.step);
        let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for i in 0..params.len() {
            self.m[i] = cfg.adam_beta1 * self.m[i] + (1.0 - cfg.adam_beta1) * grad[i];
            self.v[i] = cfg.adam_beta2 * self.v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] =
                params[i] * decay - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
    pub clamped: usize,
}

impl TrainReport {
    /// The trace as `epoch,mean_loss` CSV, epochs numbered from 1.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "epoch,mean_loss")?;
        for (i, l) in self.loss_trace.iter().enumerate() {
            writeln!(sink, "{},{}", i + 1, l)?;
        }
        Ok(())
    }
}

/// Mini-batch AdamW training on standardized windows. Returns a new model.
pub fn train(
    model: &HierarchicalModel,
    data: &[Epoch],
    cfg: &TrainConfig,
) -> Result<(HierarchicalModel, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let dims = (model.config.n_channels, model.config.window_len);
    if let Some(bad) = data.iter().find(|e| e.data.dim() != dims) {
        return Err(Error::Dimension {
            expected: format!("{dims:?}"),
            got: format!("{:?}", bad.data.dim()),
        });
    }
    let mut model = model.clone();
    let n = model.layout.total;
    let mut adam_a = Adam::new(n);
    let mut adam_b = Adam::new(n);
    let mut shuffle = substream(cfg.seed, Stream::Shuffle);
    let mut dropout = substream(cfg.seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport {
        loss_trace: Vec::with_capacity(cfg.epochs),
        clamped: 0,
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros(n);
            for &i in batch {
                let x = standardize(data[i].data.view());
                let bw = model.backward(x.view(), data[i].label, Some(&mut dropout), false)?;
                if !bw.loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch: epoch + 1 });
                }
                report.clamped += bw.clamped as usize;
                total_loss += bw.loss;
                acc.accumulate(&bw.grads);
            }
            let scale = 1.0 / batch.len() as f64;
            acc.stage_a
                .iter_mut()
                .chain(acc.stage_b.iter_mut())
                .for_each(|g| *g *= scale);
            adam_a.update(&mut model.stage_a.params, &acc.stage_a, cfg);
            adam_b.update(&mut model.stage_b.params, &acc.stage_b, cfg);
        }
        let mean = total_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: epoch + 1 });
        }
        log::debug!("epoch {} mean loss {mean:.5}", epoch + 1);
        report.loss_trace.push(mean);
    }
    if report.clamped > 0 {
        log::warn!(
            "{} loss evaluations clamped at probability {LOSS_EPS}",
            report.clamped
        );
    }
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub base: TrainConfig,
    /// Multiplier on the base learning rate.
    pub lr_scale: f64,
    pub epochs: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            lr_scale: 0.1,
            epochs: 10,
        }
    }
}

/// Continues training on calibration data only. The input model is untouched.
pub fn calibrate(
    model: &HierarchicalModel,
    data: &[Epoch],
    cfg: &CalibrationConfig,
) -> Result<(HierarchicalModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::Empty("calibration set".into()));
    }
    if cfg.epochs == 0 {
        return Ok((
            model.clone(),
            TrainReport {
                loss_trace: vec![],
                clamped: 0,
            },
        ));
    }
    let train_cfg = TrainConfig {
        learning_rate: cfg.base.learning_rate * cfg.lr_scale,
        epochs: cfg.epochs,
        ..cfg.base.clone()
    };
    train(model, data, &train_cfg)
}

pub const HMDL_MAGIC: &[u8; 4] = b"HMDL";
pub const HMDL_VERSION: u32 = 1;

/// Writes `"HMDL" | version u32 | NetConfig | stage A | stage B`, each stage
/// as `n_params u64` followed by f64 parameters, little-endian.
pub fn save_model<W: Write>(model: &HierarchicalModel, mut sink: W) -> Result<()> {
    let c = &model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(HMDL_MAGIC);
    buf.extend_from_slice(&HMDL_VERSION.to_le_bytes());
    for v in [
        c.n_channels,
        c.window_len,
        c.temporal_filters,
        c.deep_filters.len(),
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &f in &c.deep_filters {
        buf.extend_from_slice(&(f as u32).to_le_bytes());
    }
    for v in [c.kernel_len, c.pool_len] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&c.dropout_rate.to_le_bytes());
    buf.extend_from_slice(&(c.dense_hidden as u32).to_le_bytes());
    for stage in [&model.stage_a, &model.stage_b] {
        buf.extend_from_slice(&(stage.params.len() as u64).to_le_bytes());
        for p in &stage.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

pub fn load_model<R: Read>(mut source: R) -> Result<HierarchicalModel> {
    let mut magic = [0u8; 4];
    read_exact(&mut source, &mut magic, "model magic")?;
    if &magic != HMDL_MAGIC {
        return Err(Error::Format(format!(
            "bad model magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u32(&mut source, "model version")?;
    if version != HMDL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: HMDL_VERSION,
        });
    }
    let n_channels = read_u32(&mut source, "n_channels")? as usize;
    let window_len = read_u32(&mut source, "window_len")? as usize;
    let temporal_filters = read_u32(&mut source, "temporal_filters")? as usize;
    let n_deep = read_u32(&mut source, "deep block count")? as usize;
    if n_deep > 64 {
        return Err(Error::Format(format!(
            "implausible deep block count {n_deep}"
        )));
    }
    let deep_filters = (0..n_deep)
        .map(|_| read_u32(&mut source, "deep filters").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let kernel_len = read_u32(&mut source, "kernel_len")? as usize;
    let pool_len = read_u32(&mut source, "pool_len")? as usize;
    let dropout_rate = read_f64(&mut source, "dropout_rate")?;
    let dense_hidden = read_u32(&mut source, "dense_hidden")? as usize;
    let config = NetConfig {
        n_channels,
        window_len,
        temporal_filters,
        deep_filters,
        kernel_len,
        pool_len,
        dropout_rate,
        dense_hidden,
    };
    let layout = Layout::new(&config).map_err(|e| Error::Format(format!("model config: {e}")))?;
    let mut stages = Vec::with_capacity(2);
    for name in ["stage_a", "stage_b"] {
        let n = read_u64(&mut source, "parameter count")? as usize;
        if n != layout.total {
            return Err(Error::Format(format!(
                "{name} has {n} parameters, config implies {}",
                layout.total
            )));
        }
        let mut bytes = vec![0u8; 8 * n];
        read_exact(&mut source, &mut bytes, name)?;
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format(format!(
                "{name} contains non-finite parameters"
            )));
        }
        stages.push(StageNet { params });
    }
    let stage_b = stages.pop().unwrap();
    let stage_a = stages.pop().unwrap();
    HierarchicalModel::from_parts(config, stage_a, stage_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    pub(crate) fn tiny_config() -> NetConfig {
        NetConfig {
            n_channels: 3,
            window_len: 30,
            temporal_filters: 2,
            deep_filters: vec![3, 2],
            kernel_len: 3,
            pool_len: 2,
            dropout_rate: 0.1,
            dense_hidden: 4,
        }
    }

    fn random_input(c: usize, t: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((c, t), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn composition_identities() {
        assert_eq!(compose([0.8, 0.2], [0.5, 0.5]), [0.8, 0.1, 0.1]);
        let mut m = HierarchicalModel::new(NetConfig::default(), 1).unwrap();
        m.stage_a.params.fill(0.0);
        m.stage_b.params.fill(0.0);
        let x = random_input(32, 250, 2);
        assert_eq!(m.probs(x.view()).unwrap(), [0.5, 0.25, 0.25]);
    }

    #[test]
    #[allow(clippy::approx_constant)] // hand-computed six-decimal values
    fn loss_examples() {
        assert!((loss(&[0.8, 0.1, 0.1], ClassId::TrueTarget) - 2.302585).abs() < 1e-6);
        assert_eq!(loss(&[0.0, 1.0, 0.0], ClassId::TrueTarget), 0.0);
        assert!((loss(&[0.5, 0.25, 0.25], ClassId::NonTarget) - 0.693147).abs() < 1e-6);
        assert!((loss(&[1.0, 0.0, 0.0], ClassId::ErrorTarget) - (-LOSS_EPS.ln())).abs() < 1e-9);
    }

    #[test]
    fn standardize_examples() {
        let x = ndarray::arr2(&[[3.0f64, 3.0, 3.0], [0.0, 2.0, 0.0]]);
        let s = standardize(x.view());
        assert_eq!(s.row(0).to_vec(), vec![0.0; 3]);
        let two = standardize(ndarray::arr2(&[[0.0f64, 2.0]]).view());
        assert_eq!(two.row(0).to_vec(), vec![-1.0, 1.0]);
        let r = random_input(5, 100, 3).mapv(|v| 7.0 * v + 3.0);
        let s = standardize(r.view());
        for row in s.rows() {
            assert!(row.mean().unwrap().abs() < 1e-9);
            let var = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
            assert!((var - 1.0).abs() < 1e-9);
        }
        let again = standardize(s.view());
        assert!(again
            .iter()
            .zip(s.iter())
            .all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn argmax_tie_break() {
        assert_eq!(argmax3(&[0.8, 0.1, 0.1]), ClassId::NonTarget);
        assert_eq!(argmax3(&[0.4, 0.4, 0.2]), ClassId::NonTarget);
        assert_eq!(argmax3(&[0.2, 0.4, 0.4]), ClassId::TrueTarget);
        assert_eq!(argmax3(&[0.1, 0.2, 0.7]), ClassId::ErrorTarget);
    }

    #[test]
    fn config_validation() {
        assert!(NetConfig::default().validate().is_ok());
        assert!(NetConfig {
            window_len: 20,
            ..NetConfig::default()
        }
        .validate()
        .is_err());
        assert!(NetConfig {
            dropout_rate: 1.0,
            ..NetConfig::default()
        }
        .validate()
        .is_err());
        // 8*10 + 8*8*32 + 8 + (8*8*10 + 8) + (16*8*10 + 16) + (32*64 + 32) + (2*32 + 2)
        assert_eq!(Layout::count(&NetConfig::default()).unwrap(), 6226);
    }

    fn param_mut(m: &mut HierarchicalModel, stage: usize, i: usize) -> &mut f64 {
        if stage == 0 {
            &mut m.stage_a.params[i]
        } else {
            &mut m.stage_b.params[i]
        }
    }

    fn loss_with_mask(m: &HierarchicalModel, x: &Array2<f64>, label: ClassId, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loss(&m.forward(x.view(), Some(&mut rng)).unwrap(), label)
    }

    #[test]
    fn gradients_match_central_differences() {
        let cfg = tiny_config();
        let x = random_input(3, 30, 11);
        for (mseed, label) in [
            (1, ClassId::NonTarget),
            (2, ClassId::TrueTarget),
            (3, ClassId::ErrorTarget),
        ] {
            let model = HierarchicalModel::new(cfg.clone(), mseed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let bw = model
                .backward(x.view(), label, Some(&mut rng), false)
                .unwrap();
            for stage in 0..2 {
                let grads = if stage == 0 {
                    &bw.grads.stage_a
                } else {
                    &bw.grads.stage_b
                };
                for i in 0..grads.len() {
                    let h = 1e-4;
                    let mut plus = model.clone();
                    *param_mut(&mut plus, stage, i) += h;
                    let mut minus = model.clone();
                    *param_mut(&mut minus, stage, i) -= h;
                    let fd = (loss_with_mask(&plus, &x, label, 99)
                        - loss_with_mask(&minus, &x, label, 99))
                        / (2.0 * h);
                    let rel = (grads[i] - fd).abs() / (grads[i].abs() + 1e-8);
                    assert!(
                        rel < 1e-4,
                        "label {label:?} stage {stage} param {i}: analytic {} fd {fd}",
                        grads[i]
                    );
                }
            }
        }
    }

    #[test]
    fn stage_b_gradient_depends_on_label() {
        let model = HierarchicalModel::new(tiny_config(), 4).unwrap();
        let x = random_input(3, 30, 5);
        let bw = model
            .backward::<ChaCha8Rng>(x.view(), ClassId::NonTarget, None, false)
            .unwrap();
        assert!(bw.grads.stage_b.iter().all(|&g| g == 0.0));
        assert!(bw.grads.stage_a.iter().any(|&g| g != 0.0));
        // finite differences agree that stage B does not move a NonTarget loss
        let mut plus = model.clone();
        plus.stage_b.params[0] += 1e-3;
        let l0 = loss(&model.probs(x.view()).unwrap(), ClassId::NonTarget);
        let l1 = loss(&plus.probs(x.view()).unwrap(), ClassId::NonTarget);
        assert_eq!(l0, l1);

        let bw = model
            .backward::<ChaCha8Rng>(x.view(), ClassId::TrueTarget, None, false)
            .unwrap();
        assert!(bw.grads.stage_a.iter().any(|&g| g != 0.0));
        assert!(bw.grads.stage_b.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let model = HierarchicalModel::new(tiny_config(), 6).unwrap();
        let x = random_input(3, 30, 7);
        let bw = model
            .backward::<ChaCha8Rng>(x.view(), ClassId::ErrorTarget, None, true)
            .unwrap();
        let g = bw.input_grad.unwrap();
        for (c, t) in [(0, 0), (1, 13), (2, 29), (0, 17)] {
            let h = 1e-5;
            let mut xp = x.clone();
            xp[[c, t]] += h;
            let mut xm = x.clone();
            xm[[c, t]] -= h;
            let fd = (loss(&model.probs(xp.view()).unwrap(), ClassId::ErrorTarget)
                - loss(&model.probs(xm.view()).unwrap(), ClassId::ErrorTarget))
                / (2.0 * h);
            assert!(
                (g[[c, t]] - fd).abs() / (g[[c, t]].abs() + 1e-8) < 1e-4,
                "({c},{t}) {} vs {fd}",
                g[[c, t]]
            );
        }
    }

    #[test]
    fn backward_is_deterministic_without_dropout() {
        let model = HierarchicalModel::new(tiny_config(), 8).unwrap();
        let x = random_input(3, 30, 9);
        let a = model
            .backward::<ChaCha8Rng>(x.view(), ClassId::TrueTarget, None, false)
            .unwrap();
        let b = model
            .backward::<ChaCha8Rng>(x.view(), ClassId::TrueTarget, None, false)
            .unwrap();
        assert_eq!(a.grads, b.grads);
    }

    #[test]
    fn dimension_mismatch() {
        let model = HierarchicalModel::new(tiny_config(), 1).unwrap();
        let x = random_input(4, 30, 1);
        assert!(matches!(
            model.probs(x.view()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn simplex_for_random_parameters() {
        let cfg = tiny_config();
        let x = random_input(3, 30, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut m = HierarchicalModel::new(cfg.clone(), rng.random()).unwrap();
            let scale: f64 = rng.random_range(0.1..50.0);
            m.stage_a
                .params
                .iter_mut()
                .chain(m.stage_b.params.iter_mut())
                .for_each(|p| *p *= scale);
            let p = m.probs(x.view()).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    fn toy_epochs(n: usize, seed: u64) -> Vec<Epoch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = ClassId::ALL[i % 3];
                let data = Array2::from_shape_fn((3, 30), |(c, t)| {
                    let signal = match label {
                        ClassId::NonTarget => 0.0,
                        ClassId::TrueTarget => {
                            if c == 0 && (10..15).contains(&t) {
                                4.0
                            } else {
                                0.0
                            }
                        }
                        ClassId::ErrorTarget => {
                            if c == 2 && (10..15).contains(&t) {
                                4.0
                            } else {
                                0.0
                            }
                        }
                    };
                    (signal + 0.3 * rng.sample::<f64, _>(StandardNormal)) as f32
                });
                Epoch {
                    data,
                    label,
                    source_onset: i,
                }
            })
            .collect()
    }

    #[test]
    fn training_learns_and_is_deterministic() {
        let data = toy_epochs(90, 1);
        let model = HierarchicalModel::new(tiny_config(), 3).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            learning_rate: 0.01,
            epochs: 60,
            seed: 4,
            ..Default::default()
        };
        let (trained, report) = train(&model, &data, &cfg).unwrap();
        assert_eq!(report.loss_trace.len(), 60);
        assert!(report.loss_trace[59] < report.loss_trace[0]);
        let correct = data
            .iter()
            .filter(|e| {
                trained
                    .predict(standardize(e.data.view()).view())
                    .unwrap()
                    .0
                    == e.label
            })
            .count();
        assert!(correct >= 85, "{correct}/90");
        let (again, report2) = train(&model, &data, &cfg).unwrap();
        assert_eq!(trained, again);
        assert_eq!(report.loss_trace, report2.loss_trace);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = toy_epochs(20, 2);
        let model = HierarchicalModel::new(tiny_config(), 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            weight_decay: 0.0,
            epochs: 2,
            ..Default::default()
        };
        let (trained, _) = train(&model, &data, &cfg).unwrap();
        assert_eq!(trained, model);
        assert!(train(&model, &[], &cfg).is_err());
    }

    #[test]
    fn calibration_behaviour() {
        let data = toy_epochs(30, 3);
        let model = HierarchicalModel::new(tiny_config(), 3).unwrap();
        let cfg = CalibrationConfig {
            epochs: 0,
            ..Default::default()
        };
        assert_eq!(calibrate(&model, &data, &cfg).unwrap().0, model);
        assert!(calibrate(&model, &[], &CalibrationConfig::default()).is_err());
        let cfg = CalibrationConfig {
            epochs: 3,
            ..Default::default()
        };
        let (a, _) = calibrate(&model, &data, &cfg).unwrap();
        let (b, _) = calibrate(&model, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, model);
    }

    #[test]
    fn model_file_round_trip_and_errors() {
        let model = HierarchicalModel::new(NetConfig::default(), 12).unwrap();
        let mut buf = Vec::new();
        save_model(&model, &mut buf).unwrap();
        let back = load_model(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert!(back
            .stage_a
            .params
            .iter()
            .zip(&model.stage_a.params)
            .all(|(a, b)| a.to_bits() == b.to_bits()));

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(load_model(bad.as_slice()), Err(Error::Format(_))));
        let mut ver = buf.clone();
        ver[4] = 9;
        assert!(matches!(
            load_model(ver.as_slice()),
            Err(Error::Version { .. })
        ));
        assert!(matches!(
            load_model(&buf[..buf.len() - 4]),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn predict_is_argmax_of_eval_forward() {
        let model = HierarchicalModel::new(NetConfig::default(), 5).unwrap();
        for s in 0..100 {
            let x = random_input(32, 250, 1000 + s);
            let (class, p) = model.predict(x.view()).unwrap();
            let q = model.probs(x.view()).unwrap();
            assert_eq!(p, q);
            let best = (0..3).fold(0, |b, i| if q[i] > q[b] { i } else { b });
            assert_eq!(class.index(), best);
        }
    }
}
