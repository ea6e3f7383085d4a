//! Forward and backward passes.
//!
//! Activations of the 1-D blocks are stored channel-major as `[F, B * L]`
//! so that each convolution is one GEMM over the whole batch. The 2-D block
//! runs per sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{softmax, weighted_ce_logit_grad};
use super::model::ModelParams;
use super::scalar::{gemm, Float, Op};
use crate::error::{Error, Result};

/// How dropout and batch normalization behave in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout on (seeded), batch-norm over batch statistics.
    Train { seed: u64 },
    /// Dropout off, batch-norm over batch statistics.
    BatchStats,
    /// Dropout off, batch-norm over running statistics.
    Infer,
}

impl Mode {
    fn dropout_seed(self) -> Option<u64> {
        match self {
            Mode::Train { seed } => Some(seed),
            _ => None,
        }
    }

    pub fn uses_batch_stats(self) -> bool {
        !matches!(self, Mode::Infer)
    }
}

/// Geometry of a valid 1-D convolution followed by max-pooling.
#[derive(Debug, Clone, Copy)]
struct Conv1d {
    cin: usize,
    f: usize,
    k: usize,
    lout: usize,
    pout: usize,
    pool: usize,
}

impl Conv1d {
    fn ck(&self) -> usize {
        self.cin * self.k
    }
}

/// Source layout for im2col: element `(c, b, t)` is at
/// `c * stride_c + b * stride_b + t`.
#[derive(Debug, Clone, Copy)]
struct Strides {
    c: usize,
    b: usize,
}

fn im2col1d<T: Float>(src: &[T], g: &Conv1d, batch: usize, s: Strides) -> Vec<T> {
    let n = batch * g.lout;
    let mut col = vec![T::ZERO; g.ck() * n];
    for c in 0..g.cin {
        for kk in 0..g.k {
            let row = &mut col[(c * g.k + kk) * n..][..n];
            for b in 0..batch {
                let off = c * s.c + b * s.b + kk;
                row[b * g.lout..(b + 1) * g.lout].copy_from_slice(&src[off..off + g.lout]);
            }
        }
    }
    col
}

fn col2im1d<T: Float>(col: &[T], g: &Conv1d, batch: usize, s: Strides, dst: &mut [T]) {
    let n = batch * g.lout;
    for c in 0..g.cin {
        for kk in 0..g.k {
            let row = &col[(c * g.k + kk) * n..][..n];
            for b in 0..batch {
                let off = c * s.c + b * s.b + kk;
                for (d, v) in dst[off..off + g.lout].iter_mut().zip(&row[b * g.lout..(b + 1) * g.lout]) {
                    *d += *v;
                }
            }
        }
    }
}

struct BnRefs<'a, T> {
    gamma: &'a [T],
    beta: &'a [T],
    mean: &'a [T],
    var: &'a [T],
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Batch mean and unbiased variance, when batch statistics were used.
    stats: Option<(Vec<T>, Vec<T>)>,
}

fn bn_forward<T: Float>(x: &[T], c: usize, n: usize, p: &BnRefs<T>, eps: f64, batch_stats: bool) -> (Vec<T>, BnCache<T>) {
    let mut y = vec![T::ZERO; c * n];
    let mut xhat = vec![T::ZERO; c * n];
    let mut inv_std = vec![T::ZERO; c];
    let mut stats = batch_stats.then(|| (vec![T::ZERO; c], vec![T::ZERO; c]));
    for ch in 0..c {
        let row = &x[ch * n..(ch + 1) * n];
        let (mean, var) = match stats.as_mut() {
            Some((ms, vs)) => {
                let m = lane_sum_f64(row, |v| v) / n as f64;
                let ss = lane_sum_f64(row, |v| (v - m) * (v - m));
                ms[ch] = T::from_f64(m);
                vs[ch] = T::from_f64(if n > 1 { ss / (n - 1) as f64 } else { 0.0 });
                (m, ss / n as f64)
            }
            None => (p.mean[ch].to_f64(), p.var[ch].to_f64()),
        };
        let is = 1.0 / (var + eps).sqrt();
        inv_std[ch] = T::from_f64(is);
        let (m, is, g, b) = (T::from_f64(mean), T::from_f64(is), p.gamma[ch], p.beta[ch]);
        for i in 0..n {
            let xh = (row[i] - m) * is;
            xhat[ch * n + i] = xh;
            y[ch * n + i] = g * xh + b;
        }
    }
    (y, BnCache { xhat, inv_std, stats })
}

/// Returns (dx, dgamma, dbeta).
fn bn_backward<T: Float>(dy: &[T], cache: &BnCache<T>, gamma: &[T], c: usize, n: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::ZERO; c * n];
    let mut dgamma = vec![T::ZERO; c];
    let mut dbeta = vec![T::ZERO; c];
    for ch in 0..c {
        let dyr = &dy[ch * n..(ch + 1) * n];
        let xh = &cache.xhat[ch * n..(ch + 1) * n];
        let sum_dy: f64 = dyr.iter().map(|v| v.to_f64()).sum();
        let sum_dyx: f64 = dyr.iter().zip(xh).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
        dgamma[ch] = T::from_f64(sum_dyx);
        dbeta[ch] = T::from_f64(sum_dy);
        let k = gamma[ch] * cache.inv_std[ch];
        let out = &mut dx[ch * n..(ch + 1) * n];
        if cache.stats.is_some() {
            let nf = T::from_f64(n as f64);
            let (sdy, sdyx) = (T::from_f64(sum_dy), T::from_f64(sum_dyx));
            let kn = k / nf;
            for i in 0..n {
                out[i] = kn * (nf * dyr[i] - sdy - xh[i] * sdyx);
            }
        } else {
            for i in 0..n {
                out[i] = k * dyr[i];
            }
        }
    }
    (dx, dgamma, dbeta)
}

fn dropout_mask<T: Float>(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<T> {
    let keep = T::from_f64(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { T::ZERO } else { keep })
        .collect()
}

/// Max-pool over non-overlapping windows (floor). Returns pooled values, the
/// winning offset of each window and the smallest gap between the winner and
/// any other window entry.
fn pool_forward<T: Float>(z: &[T], f: usize, batch: usize, g: &Conv1d, track: bool) -> (Vec<T>, Vec<u8>, f64) {
    let mut u = vec![T::ZERO; f * batch * g.pout];
    let mut arg = vec![0u8; u.len()];
    let mut margin = f64::INFINITY;
    for ch in 0..f {
        for b in 0..batch {
            for t in 0..g.pout {
                let base = ch * batch * g.lout + b * g.lout + t * g.pool;
                let w = &z[base..base + g.pool];
                let mut best = 0;
                for k in 1..g.pool {
                    if w[k] > w[best] {
                        best = k;
                    }
                }
                for (k, v) in w.iter().enumerate() {
                    if track && k != best {
                        margin = margin.min((w[best] - *v).to_f64());
                    }
                }
                let o = ch * batch * g.pout + b * g.pout + t;
                u[o] = w[best];
                arg[o] = best as u8;
            }
        }
    }
    (u, arg, margin)
}

fn pool_backward<T: Float>(du: &[T], arg: &[u8], f: usize, batch: usize, g: &Conv1d) -> Vec<T> {
    let mut dz = vec![T::ZERO; f * batch * g.lout];
    for ch in 0..f {
        for b in 0..batch {
            for t in 0..g.pout {
                let o = ch * batch * g.pout + b * g.pout + t;
                dz[ch * batch * g.lout + b * g.lout + t * g.pool + arg[o] as usize] = du[o];
            }
        }
    }
    dz
}

fn min_abs<T: Float>(v: &[T]) -> f64 {
    v.iter().fold(f64::INFINITY, |m, x| m.min(x.to_f64().abs()))
}

/// Sum with eight independent accumulators (fixed order, so deterministic).
fn lane_sum<T: Float>(v: &[T]) -> T {
    let mut acc = [T::ZERO; 8];
    let chunks = v.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for k in 0..8 {
            acc[k] += c[k];
        }
    }
    let mut total = tail.iter().copied().sum::<T>();
    for a in acc {
        total += a;
    }
    total
}

fn lane_sum_f64<T: Float>(v: &[T], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = v.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for k in 0..8 {
            acc[k] += f(c[k].to_f64());
        }
    }
    tail.iter().map(|x| f(x.to_f64())).sum::<f64>() + acc.iter().sum::<f64>()
}

/// `conv1d -> max-pool -> ReLU -> batch norm -> dropout`. Pooling before
/// the ReLU gives the same output as after it, since both are monotone.
#[derive(Debug, Clone)]
struct BlockTrace<T> {
    col: Vec<T>,
    arg: Vec<u8>,
    u: Vec<T>,
    bn: BnCache<T>,
    drop: Option<Vec<T>>,
    h: Vec<T>,
}

struct BlockRefs<'a, T> {
    w: &'a [T],
    b: &'a [T],
    bn: BnRefs<'a, T>,
}

struct BlockGrads<T> {
    w: Vec<T>,
    b: Vec<T>,
    gamma: Vec<T>,
    beta: Vec<T>,
    col: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
fn block_forward<T: Float>(
    g: &Conv1d,
    col: Vec<T>,
    batch: usize,
    p: &BlockRefs<T>,
    eps: f64,
    batch_stats: bool,
    dropout: Option<(&mut ChaCha8Rng, f64)>,
    kink: &mut Option<f64>,
) -> BlockTrace<T> {
    let n = batch * g.lout;
    let mut z = vec![T::ZERO; g.f * n];
    gemm(g.f, g.ck(), n, p.w, Op::N, &col, Op::N, T::ZERO, &mut z);
    for ch in 0..g.f {
        let bias = p.b[ch];
        z[ch * n..(ch + 1) * n].iter_mut().for_each(|v| *v += bias);
    }
    let (u, arg, tie) = pool_forward(&z, g.f, batch, g, kink.is_some());
    if let Some(k) = kink {
        *k = k.min(tie).min(min_abs(&u));
    }
    let a: Vec<T> = u.iter().map(|&v| v.max(T::ZERO)).collect();
    let (y, bn) = bn_forward(&a, g.f, batch * g.pout, &p.bn, eps, batch_stats);
    let (h, drop) = match dropout {
        Some((rng, rate)) if rate > 0.0 => {
            let m = dropout_mask::<T>(rng, y.len(), rate);
            (y.iter().zip(&m).map(|(a, b)| *a * *b).collect(), Some(m))
        }
        _ => (y, None),
    };
    BlockTrace { col, arg, u, bn, drop, h }
}

fn block_backward<T: Float>(g: &Conv1d, batch: usize, tr: &BlockTrace<T>, dh: &[T], p: &BlockRefs<T>, want_col: bool) -> BlockGrads<T> {
    let dy: Vec<T> = match &tr.drop {
        Some(m) => dh.iter().zip(m).map(|(a, b)| *a * *b).collect(),
        None => dh.to_vec(),
    };
    let (da, gamma, beta) = bn_backward(&dy, &tr.bn, p.bn.gamma, g.f, batch * g.pout);
    let du: Vec<T> = da.iter().zip(&tr.u).map(|(d, u)| if *u > T::ZERO { *d } else { T::ZERO }).collect();
    let dz = pool_backward(&du, &tr.arg, g.f, batch, g);
    let n = batch * g.lout;
    let mut w = vec![T::ZERO; g.f * g.ck()];
    gemm(g.f, n, g.ck(), &dz, Op::N, &tr.col, Op::T, T::ZERO, &mut w);
    let b = dz.chunks(n).map(|r| r.iter().copied().sum()).collect();
    let col = want_col.then(|| {
        let mut dcol = vec![T::ZERO; g.ck() * n];
        gemm(g.ck(), g.f, n, p.w, Op::T, &dz, Op::N, T::ZERO, &mut dcol);
        dcol
    });
    BlockGrads { w, b, gamma, beta, col }
}

/// Geometry of the 2-D block. Output positions whose receptive field lies
/// entirely in the zero padding of the block-2 rows ("dead" positions)
/// always equal the bias and are not convolved.
#[derive(Debug, Clone)]
struct Conv2d {
    h: usize,
    w: usize,
    f1: usize,
    p1: usize,
    p2: usize,
    kh: usize,
    kw: usize,
    sw: usize,
    /// Live output positions, grouped per output row as (image offset of
    /// the first position's receptive field, count).
    runs: Vec<(usize, usize)>,
    n_live: usize,
    n_dead: usize,
    n_pos: usize,
}

impl Conv2d {
    fn new<T: Float>(m: &ModelParams<T>) -> Self {
        let a = m.arch();
        let s = m.shapes();
        let [kh, kw] = a.conv2d_kernel;
        let [sh, sw] = a.conv2d_stride;
        let mut runs = Vec::with_capacity(s.out_h);
        for i in 0..s.out_h {
            // Columns j with j * sw >= p2 are dead in the padded rows.
            let len = if i * sh >= a.conv1_filters { s.p2.div_ceil(sw).min(s.out_w) } else { s.out_w };
            if len > 0 {
                runs.push((i * sh * s.img_w, len));
            }
        }
        let n_live: usize = runs.iter().map(|r| r.1).sum();
        Self {
            h: s.img_h,
            w: s.img_w,
            f1: a.conv1_filters,
            p1: s.p1,
            p2: s.p2,
            kh,
            kw,
            sw,
            n_dead: s.out_positions() - n_live,
            n_pos: s.out_positions(),
            runs,
            n_live,
        }
    }

    fn kk(&self) -> usize {
        self.kh * self.kw
    }

    fn im2col<T: Float>(&self, img: &[T]) -> Vec<T> {
        let n = self.n_live;
        let mut col = vec![T::ZERO; self.kk() * n];
        for a in 0..self.kh {
            for c in 0..self.kw {
                let row = &mut col[(a * self.kw + c) * n..][..n];
                let mut p = 0;
                for &(o, len) in &self.runs {
                    let src = o + a * self.w + c;
                    let dst = &mut row[p..p + len];
                    if self.sw == 1 {
                        dst.copy_from_slice(&img[src..src + len]);
                    } else {
                        dst.iter_mut().enumerate().for_each(|(q, d)| *d = img[src + q * self.sw]);
                    }
                    p += len;
                }
            }
        }
        col
    }

    fn col2im<T: Float>(&self, col: &[T]) -> Vec<T> {
        let n = self.n_live;
        let mut img = vec![T::ZERO; self.h * self.w];
        for a in 0..self.kh {
            for c in 0..self.kw {
                let row = &col[(a * self.kw + c) * n..][..n];
                let mut p = 0;
                for &(o, len) in &self.runs {
                    let dst = o + a * self.w + c;
                    for (q, v) in row[p..p + len].iter().enumerate() {
                        img[dst + q * self.sw] += *v;
                    }
                    p += len;
                }
            }
        }
        img
    }

    /// Stacks the block outputs of sample `b` into a single-channel image:
    /// block-1 rows on top, block-2 rows below, right-padded with zeros.
    fn combine<T: Float>(&self, h1: &[T], h2: &[T], batch: usize, b: usize, img: &mut [T]) {
        for r in 0..self.f1 {
            let src = &h1[r * batch * self.p1 + b * self.p1..][..self.p1];
            img[r * self.w..r * self.w + self.p1].copy_from_slice(src);
        }
        for r in 0..self.h - self.f1 {
            let src = &h2[r * batch * self.p2 + b * self.p2..][..self.p2];
            let o = (self.f1 + r) * self.w;
            img[o..o + self.p2].copy_from_slice(src);
        }
    }

    /// Adjoint of [`Conv2d::combine`], accumulating into `dh1` and `dh2`.
    fn split<T: Float>(&self, dimg: &[T], batch: usize, b: usize, dh1: &mut [T], dh2: &mut [T]) {
        for r in 0..self.f1 {
            let dst = &mut dh1[r * batch * self.p1 + b * self.p1..][..self.p1];
            for (d, v) in dst.iter_mut().zip(&dimg[r * self.w..]) {
                *d += *v;
            }
        }
        for r in 0..self.h - self.f1 {
            let dst = &mut dh2[r * batch * self.p2 + b * self.p2..][..self.p2];
            for (d, v) in dst.iter_mut().zip(&dimg[(self.f1 + r) * self.w..]) {
                *d += *v;
            }
        }
    }
}

/// Everything retained from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub mode: Mode,
    pub batch: usize,
    b1: BlockTrace<T>,
    b2: BlockTrace<T>,
    /// Combined images, `[B, H * W]`.
    img: Vec<T>,
    /// ReLU masks of the live conv2d outputs, `[B, F3, n_live]`.
    mask3: Vec<u8>,
    bn3: BnCache<T>,
    drop3: Option<Vec<T>>,
    /// Dense-layer input, `[F3, B]`.
    h3: Vec<T>,
    /// Row-major `[B, n_classes]`.
    pub logits: Vec<T>,
    pub probs: Vec<T>,
    /// Smallest distance of any ReLU input to 0 or any max-pool winner to
    /// the runner-up. Finite differences are unreliable when this is tiny.
    /// Only computed by [`forward_tracked`].
    pub kink_margin: Option<f64>,
}

/// Runs the network on `x`, laid out `[B, channels, length]` in physical
/// units (the architecture's input scale is applied here).
pub fn forward<T: Float>(model: &ModelParams<T>, x: &[T], batch: usize, mode: Mode) -> Result<Trace<T>> {
    forward_impl(model, x, batch, mode, false)
}

/// [`forward`] that also records [`Trace::kink_margin`].
pub fn forward_tracked<T: Float>(model: &ModelParams<T>, x: &[T], batch: usize, mode: Mode) -> Result<Trace<T>> {
    forward_impl(model, x, batch, mode, true)
}

fn forward_impl<T: Float>(model: &ModelParams<T>, x: &[T], batch: usize, mode: Mode, track: bool) -> Result<Trace<T>> {
    let a = model.arch();
    let s = *model.shapes();
    let pi = model.index();
    let bi = model.buffer_index();
    let (c0, t0) = (a.in_channels, a.input_len);
    if batch == 0 || x.len() != batch * c0 * t0 {
        return Err(Error::ShapeMismatch(format!(
            "forward: {} inputs for batch {batch} of {c0}x{t0}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input".into()));
    }
    let w = &model.weights;
    let buf = &model.buffers;
    let bn_refs = |k: usize, gamma: &std::ops::Range<usize>, beta: &std::ops::Range<usize>| BnRefs {
        gamma: &w[gamma.clone()],
        beta: &w[beta.clone()],
        mean: &buf[bi.bn_mean[k].clone()],
        var: &buf[bi.bn_var[k].clone()],
    };
    let batch_stats = mode.uses_batch_stats();
    let mut rng = mode.dropout_seed().map(ChaCha8Rng::seed_from_u64);
    let mut kink = track.then_some(f64::INFINITY);

    let scales: Vec<T> = a.input_scale.iter().map(|&v| T::from_f64(v)).collect();
    let scaled: Vec<T> = x.chunks(t0).enumerate().flat_map(|(i, row)| { let s = scales[i % c0]; row.iter().map(move |v| *v * s) }).collect();

    let g1 = Conv1d {
        cin: c0,
        f: a.conv1_filters,
        k: a.conv1_kernel,
        lout: s.l1,
        pout: s.p1,
        pool: a.pool,
    };
    let p1 = BlockRefs {
        w: &w[pi.conv1_w.clone()],
        b: &w[pi.conv1_b.clone()],
        bn: bn_refs(0, &pi.bn1_gamma, &pi.bn1_beta),
    };
    let col1 = im2col1d(&scaled, &g1, batch, Strides { c: t0, b: c0 * t0 });
    let b1 = block_forward(&g1, col1, batch, &p1, a.bn_eps, batch_stats, rng.as_mut().map(|r| (r, a.dropout)), &mut kink);

    let g2 = Conv1d {
        cin: a.conv1_filters,
        f: a.conv2_filters,
        k: a.conv2_kernel,
        lout: s.l2,
        pout: s.p2,
        pool: a.pool,
    };
    let p2 = BlockRefs {
        w: &w[pi.conv2_w.clone()],
        b: &w[pi.conv2_b.clone()],
        bn: bn_refs(1, &pi.bn2_gamma, &pi.bn2_beta),
    };
    let col2 = im2col1d(&b1.h, &g2, batch, Strides { c: batch * s.p1, b: s.p1 });
    let b2 = block_forward(&g2, col2, batch, &p2, a.bn_eps, batch_stats, rng.as_mut().map(|r| (r, a.dropout)), &mut kink);

    let geo = Conv2d::new(model);
    let f3 = a.conv2d_filters;
    let wc = &w[pi.conv2d_w.clone()];
    let bc = &w[pi.conv2d_b.clone()];
    let n_live = geo.n_live;
    let inv_pos = T::from_f64(1.0 / geo.n_pos as f64);
    let dead = T::from_f64(geo.n_dead as f64);
    let hw = geo.h * geo.w;
    let mut img = vec![T::ZERO; batch * hw];
    let mut mask3 = vec![0u8; batch * f3 * n_live];
    let mut gaps = vec![T::ZERO; batch * f3];
    let margins: Vec<f64> = img
        .par_chunks_mut(hw)
        .zip(mask3.par_chunks_mut(f3 * n_live))
        .zip(gaps.par_chunks_mut(f3))
        .enumerate()
        .map(|(b, ((img, mask), gap))| {
            geo.combine(&b1.h, &b2.h, batch, b, img);
            let col = geo.im2col(img);
            let mut z = vec![T::ZERO; f3 * n_live];
            gemm(f3, geo.kk(), n_live, wc, Op::N, &col, Op::N, T::ZERO, &mut z);
            let mut margin = f64::INFINITY;
            for f in 0..f3 {
                let bias = bc[f];
                let zr = &mut z[f * n_live..(f + 1) * n_live];
                zr.iter_mut().for_each(|v| *v += bias);
                if track {
                    margin = margin.min(min_abs(zr));
                }
                for (v, m) in zr.iter_mut().zip(&mut mask[f * n_live..(f + 1) * n_live]) {
                    *m = (*v > T::ZERO) as u8;
                    *v = v.max(T::ZERO);
                }
                let mut sum = lane_sum(zr);
                if geo.n_dead > 0 {
                    if track {
                        margin = margin.min(bias.to_f64().abs());
                    }
                    sum += dead * bias.max(T::ZERO);
                }
                gap[f] = sum * inv_pos;
            }
            margin
        })
        .collect();
    let mut a3 = vec![T::ZERO; f3 * batch];
    for b in 0..batch {
        for f in 0..f3 {
            a3[f * batch + b] = gaps[b * f3 + f];
        }
    }
    if let Some(k) = kink.as_mut() {
        *k = margins.iter().fold(*k, |m, v| m.min(*v));
    }

    let (y3, bn3) = bn_forward(&a3, f3, batch, &bn_refs(2, &pi.bn3_gamma, &pi.bn3_beta), a.bn_eps, batch_stats);
    let (h3, drop3) = match rng.as_mut() {
        Some(r) if a.dropout > 0.0 => {
            let m = dropout_mask::<T>(r, y3.len(), a.dropout);
            (y3.iter().zip(&m).map(|(a, b)| *a * *b).collect::<Vec<_>>(), Some(m))
        }
        _ => (y3, None),
    };

    let nc = a.n_classes;
    let wd = &w[pi.dense_w.clone()];
    let bd = &w[pi.dense_b.clone()];
    let mut logits = vec![T::ZERO; batch * nc];
    for b in 0..batch {
        for o in 0..nc {
            let mut acc = bd[o];
            for f in 0..f3 {
                acc += wd[o * f3 + f] * h3[f * batch + b];
            }
            logits[b * nc + o] = acc;
        }
    }
    let probs = softmax(&logits, nc);
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("network output".into()));
    }
    Ok(Trace {
        mode,
        batch,
        b1,
        b2,
        img,
        mask3,
        bn3,
        drop3,
        h3,
        logits,
        probs,
        kink_margin: kink,
    })
}

/// Gradient of the weighted cross-entropy with respect to every weight, in
/// the flat weight layout.
pub fn backward<T: Float>(model: &ModelParams<T>, trace: &Trace<T>, labels: &[usize], class_weights: [f64; 2]) -> Result<Vec<T>> {
    if labels.len() != trace.batch {
        return Err(Error::ShapeMismatch(format!(
            "backward: {} labels for a batch of {}",
            labels.len(),
            trace.batch
        )));
    }
    let dlogits = weighted_ce_logit_grad(&trace.probs, labels, &class_weights)?;
    backward_from_logits(model, trace, &dlogits)
}

/// Backpropagates an arbitrary logit gradient `[B, n_classes]`.
pub fn backward_from_logits<T: Float>(model: &ModelParams<T>, trace: &Trace<T>, dlogits: &[T]) -> Result<Vec<T>> {
    let a = model.arch();
    let s = *model.shapes();
    let pi = model.index();
    let batch = trace.batch;
    let nc = a.n_classes;
    let f3 = a.conv2d_filters;
    if dlogits.len() != batch * nc || trace.h3.len() != f3 * batch {
        return Err(Error::ShapeMismatch("backward: trace does not match model or gradient".into()));
    }
    let w = &model.weights;
    let mut grad = vec![T::ZERO; w.len()];

    // Dense.
    let wd = &w[pi.dense_w.clone()];
    let mut dh3 = vec![T::ZERO; f3 * batch];
    {
        let (gw, rest) = grad[pi.dense_w.start..pi.dense_b.end].split_at_mut(pi.dense_w.len());
        for b in 0..batch {
            for o in 0..nc {
                let d = dlogits[b * nc + o];
                rest[o] += d;
                for f in 0..f3 {
                    gw[o * f3 + f] += d * trace.h3[f * batch + b];
                    dh3[f * batch + b] += wd[o * f3 + f] * d;
                }
            }
        }
    }

    // Dropout and batch norm after global pooling.
    if let Some(m) = &trace.drop3 {
        dh3.iter_mut().zip(m).for_each(|(d, k)| *d *= *k);
    }
    let (da3, dg3, db3) = bn_backward(&dh3, &trace.bn3, &w[pi.bn3_gamma.clone()], f3, batch);
    grad[pi.bn3_gamma.clone()].copy_from_slice(&dg3);
    grad[pi.bn3_beta.clone()].copy_from_slice(&db3);

    // 2-D convolution, ReLU and global average pooling, per sample.
    let geo = Conv2d::new(model);
    let n_live = geo.n_live;
    let kk = geo.kk();
    let hw = geo.h * geo.w;
    let wc = &w[pi.conv2d_w.clone()];
    let bc = &w[pi.conv2d_b.clone()];
    let inv_pos = T::from_f64(1.0 / geo.n_pos as f64);
    let per_sample: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let col = geo.im2col(&trace.img[b * hw..(b + 1) * hw]);
            let mask = &trace.mask3[b * f3 * n_live..(b + 1) * f3 * n_live];
            let mut dz = vec![T::ZERO; f3 * n_live];
            let mut db = vec![T::ZERO; f3];
            for f in 0..f3 {
                let g = da3[f * batch + b] * inv_pos;
                let mut active = 0usize;
                for (d, &m) in dz[f * n_live..(f + 1) * n_live].iter_mut().zip(&mask[f * n_live..(f + 1) * n_live]) {
                    *d = if m != 0 { g } else { T::ZERO };
                    active += m as usize;
                }
                if geo.n_dead > 0 && bc[f] > T::ZERO {
                    active += geo.n_dead;
                }
                db[f] = g * T::from_f64(active as f64);
            }
            let mut dw = vec![T::ZERO; f3 * kk];
            gemm(f3, n_live, kk, &dz, Op::N, &col, Op::T, T::ZERO, &mut dw);
            let mut dcol = vec![T::ZERO; kk * n_live];
            gemm(kk, f3, n_live, wc, Op::T, &dz, Op::N, T::ZERO, &mut dcol);
            (dw, db, geo.col2im(&dcol))
        })
        .collect();
    let mut dh1 = vec![T::ZERO; a.conv1_filters * batch * s.p1];
    let mut dh2 = vec![T::ZERO; a.conv2_filters * batch * s.p2];
    for (b, (dw, db, dimg)) in per_sample.into_iter().enumerate() {
        grad[pi.conv2d_w.clone()].iter_mut().zip(&dw).for_each(|(g, v)| *g += *v);
        grad[pi.conv2d_b.clone()].iter_mut().zip(&db).for_each(|(g, v)| *g += *v);
        geo.split(&dimg, batch, b, &mut dh1, &mut dh2);
    }

    let buf = &model.buffers;
    let bi = model.buffer_index();
    let refs = |k: usize, wr: &std::ops::Range<usize>, br: &std::ops::Range<usize>, gr: &std::ops::Range<usize>, ber: &std::ops::Range<usize>| BlockRefs {
        w: &w[wr.clone()],
        b: &w[br.clone()],
        bn: BnRefs {
            gamma: &w[gr.clone()],
            beta: &w[ber.clone()],
            mean: &buf[bi.bn_mean[k].clone()],
            var: &buf[bi.bn_var[k].clone()],
        },
    };

    // Block 2, feeding its input gradient back into block 1's output.
    let g2 = Conv1d {
        cin: a.conv1_filters,
        f: a.conv2_filters,
        k: a.conv2_kernel,
        lout: s.l2,
        pout: s.p2,
        pool: a.pool,
    };
    let p2 = refs(1, &pi.conv2_w, &pi.conv2_b, &pi.bn2_gamma, &pi.bn2_beta);
    let g = block_backward(&g2, batch, &trace.b2, &dh2, &p2, true);
    if let Some(dcol) = &g.col {
        col2im1d(dcol, &g2, batch, Strides { c: batch * s.p1, b: s.p1 }, &mut dh1);
    }
    grad[pi.conv2_w.clone()].copy_from_slice(&g.w);
    grad[pi.conv2_b.clone()].copy_from_slice(&g.b);
    grad[pi.bn2_gamma.clone()].copy_from_slice(&g.gamma);
    grad[pi.bn2_beta.clone()].copy_from_slice(&g.beta);

    let g1 = Conv1d {
        cin: a.in_channels,
        f: a.conv1_filters,
        k: a.conv1_kernel,
        lout: s.l1,
        pout: s.p1,
        pool: a.pool,
    };
    let p1 = refs(0, &pi.conv1_w, &pi.conv1_b, &pi.bn1_gamma, &pi.bn1_beta);
    let g = block_backward(&g1, batch, &trace.b1, &dh1, &p1, false);
    grad[pi.conv1_w.clone()].copy_from_slice(&g.w);
    grad[pi.conv1_b.clone()].copy_from_slice(&g.b);
    grad[pi.bn1_gamma.clone()].copy_from_slice(&g.gamma);
    grad[pi.bn1_beta.clone()].copy_from_slice(&g.beta);
    Ok(grad)
}

/// Folds the batch statistics of a batch-statistics forward pass into the
/// running statistics: `r <- momentum * r + (1 - momentum) * batch`.
pub fn update_running_stats<T: Float>(model: &mut ModelParams<T>, trace: &Trace<T>) {
    let mom = T::from_f64(model.arch().bn_momentum);
    let one_m = T::from_f64(1.0 - model.arch().bn_momentum);
    let bi = model.buffer_index().clone();
    for (k, cache) in [&trace.b1.bn, &trace.b2.bn, &trace.bn3].into_iter().enumerate() {
        if let Some((mean, var)) = &cache.stats {
            for (r, v) in model.buffers[bi.bn_mean[k].clone()].iter_mut().zip(mean) {
                *r = mom * *r + one_m * *v;
            }
            for (r, v) in model.buffers[bi.bn_var[k].clone()].iter_mut().zip(var) {
                *r = mom * *r + one_m * *v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::arch::Architecture;
    use crate::nnet::loss::weighted_ce_loss;

    fn toy_arch() -> Architecture {
        Architecture {
            in_channels: 6,
            input_len: 20,
            conv1_filters: 1,
            conv1_kernel: 5,
            conv2_filters: 1,
            conv2_kernel: 3,
            pool: 2,
            conv2d_filters: 1,
            conv2d_kernel: [2, 3],
            conv2d_stride: [2, 1],
            input_scale: vec![1.0; 6],
            ..Architecture::default()
        }
    }

    fn input(seed: u64, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Independent scalar re-implementation of the toy network (one filter
    /// per layer, running statistics, no dropout).
    fn hand_forward(m: &ModelParams<f64>, x: &[f64]) -> [f64; 2] {
        let t = |n: &str| m.tensor(n).unwrap().to_vec();
        let eps = m.arch().bn_eps;
        let bn = |v: f64, k: &str| {
            let (g, b) = (t(&format!("{k}.gamma"))[0], t(&format!("{k}.beta"))[0]);
            let (mu, var) = (t(&format!("{k}.running_mean"))[0], t(&format!("{k}.running_var"))[0]);
            g * (v - mu) / (var + eps).sqrt() + b
        };
        let w1 = t("conv1.weight");
        let c1: Vec<f64> = (0..16)
            .map(|i| t("conv1.bias")[0] + (0..6).flat_map(|c| (0..5).map(move |k| (c, k))).map(|(c, k)| w1[c * 5 + k] * x[c * 20 + i + k]).sum::<f64>())
            .collect();
        let h1: Vec<f64> = (0..8).map(|i| bn(c1[2 * i].max(c1[2 * i + 1]).max(0.0), "bn1")).collect();
        let w2 = t("conv2.weight");
        let c2: Vec<f64> = (0..6).map(|i| t("conv2.bias")[0] + (0..3).map(|k| w2[k] * h1[i + k]).sum::<f64>()).collect();
        let h2: Vec<f64> = (0..3).map(|i| bn(c2[2 * i].max(c2[2 * i + 1]).max(0.0), "bn2")).collect();
        let mut img = [[0.0; 8]; 2];
        img[0] = h1.clone().try_into().unwrap();
        img[1][..3].copy_from_slice(&h2);
        let wc = t("conv2d.weight");
        let mut acc = 0.0;
        for j in 0..6 {
            let z: f64 = t("conv2d.bias")[0] + (0..2).flat_map(|r| (0..3).map(move |c| (r, c))).map(|(r, c)| wc[r * 3 + c] * img[r][j + c]).sum::<f64>();
            acc += z.max(0.0);
        }
        let h3 = bn(acc / 6.0, "bn3");
        let wd = t("dense.weight");
        let bd = t("dense.bias");
        let l = [wd[0] * h3 + bd[0], wd[1] * h3 + bd[1]];
        let mx = l[0].max(l[1]);
        let e = [(l[0] - mx).exp(), (l[1] - mx).exp()];
        [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])]
    }

    #[test]
    fn toy_network_matches_hand_computation() {
        let arch = toy_arch();
        let s = arch.validate().unwrap();
        assert_eq!((s.l1, s.p1, s.l2, s.p2, s.img_h, s.out_h, s.out_w), (16, 8, 6, 3, 2, 1, 6));
        for seed in 0..5 {
            let mut m = ModelParams::<f64>::init(arch.clone(), seed).unwrap();
            let r = input(100 + seed, m.weights.len() + m.buffers.len());
            for (i, v) in m.buffers.iter_mut().enumerate() {
                *v = if i % 2 == 1 { 0.5 + r[i].abs() } else { 0.3 * r[i] };
            }
            for (name, off) in [("conv1.bias", 0.1), ("conv2.bias", 0.2), ("conv2d.bias", 0.3)] {
                let i = arch.tensors().iter().find(|t| t.name == name).unwrap().range.start;
                m.weights[i] = off;
            }
            let x = input(seed, 6 * 20);
            let tr = forward(&m, &x, 1, Mode::Infer).unwrap();
            let want = hand_forward(&m, &x);
            for k in 0..2 {
                assert!((tr.probs[k] - want[k]).abs() < 1e-6, "seed {seed}: {:?} vs {want:?}", tr.probs);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = ModelParams::<f32>::init(Architecture::reduced(), 2).unwrap();
        let x: Vec<f32> = input(9, 5 * 6 * 60).iter().map(|v| (*v * 300.0) as f32).collect();
        for mode in [Mode::Infer, Mode::BatchStats, Mode::Train { seed: 3 }] {
            let tr = forward(&m, &x, 5, mode).unwrap();
            for row in tr.probs.chunks(2) {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn zero_batch_rows_are_identical_in_infer_mode() {
        let m = ModelParams::<f32>::init(Architecture::default(), 4).unwrap();
        let x = vec![0.0f32; 3 * 6 * 200];
        let tr = forward(&m, &x, 3, Mode::Infer).unwrap();
        assert_eq!(tr.probs[0..2], tr.probs[2..4]);
        assert_eq!(tr.probs[0..2], tr.probs[4..6]);
    }

    #[test]
    fn dead_positions_match_full_convolution() {
        // Bias > 0 at dead positions contributes through the ReLU.
        let mut m = ModelParams::<f64>::init(Architecture::reduced(), 5).unwrap();
        let r = m.index().conv2d_b.clone();
        for (k, i) in r.enumerate() {
            m.weights[i] = if k % 2 == 0 { 0.2 } else { -0.2 };
        }
        let x = input(1, 2 * 6 * 60);
        let tr = forward(&m, &x, 2, Mode::Infer).unwrap();
        let geo = Conv2d::new(&m);
        assert!(geo.n_dead > 0);
        let a = m.arch();
        let s = m.shapes();
        let wc = m.tensor("conv2d.weight").unwrap();
        let bc = m.tensor("conv2d.bias").unwrap();
        for b in 0..2 {
            let img = &tr.img[b * s.img_h * s.img_w..(b + 1) * s.img_h * s.img_w];
            for f in 0..a.conv2d_filters {
                let mut full = 0.0;
                for i in 0..s.out_h {
                    for j in 0..s.out_w {
                        let mut z = bc[f];
                        for p in 0..3 {
                            for q in 0..15 {
                                z += wc[f * 45 + p * 15 + q] * img[(i * 3 + p) * s.img_w + j + q];
                            }
                        }
                        full += z.max(0.0);
                    }
                }
                let gap = full / s.out_positions() as f64;
                let bn = &tr.bn3;
                let xhat = bn.xhat[f * 2 + b];
                let mean = m.tensor("bn3.running_mean").unwrap()[f];
                assert!(((gap - mean) * bn.inv_std[f] - xhat).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let m = ModelParams::<f32>::init(Architecture::reduced(), 0).unwrap();
        let mut x = vec![0.0f32; 6 * 60];
        x[7] = f32::NAN;
        assert!(matches!(forward(&m, &x, 1, Mode::Infer), Err(Error::NonFinite(_))));
        assert!(matches!(forward(&m, &x[1..], 1, Mode::Infer), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn train_mode_dropout_is_seeded() {
        let m = ModelParams::<f32>::init(Architecture::reduced(), 0).unwrap();
        let x: Vec<f32> = input(3, 4 * 360).iter().map(|v| (*v * 100.0) as f32).collect();
        let a = forward(&m, &x, 4, Mode::Train { seed: 1 }).unwrap();
        let b = forward(&m, &x, 4, Mode::Train { seed: 1 }).unwrap();
        let c = forward(&m, &x, 4, Mode::Train { seed: 2 }).unwrap();
        assert_eq!(a.probs, b.probs);
        assert_ne!(a.probs, c.probs);
    }

    #[test]
    fn saturated_correct_batch_has_vanishing_gradient() {
        let mut m = ModelParams::<f64>::init(Architecture::reduced(), 6).unwrap();
        let r = m.index().dense_b.clone();
        m.weights[r.start] = 60.0;
        m.weights[r.start + 1] = -60.0;
        let x = input(2, 3 * 360);
        let tr = forward(&m, &x, 3, Mode::BatchStats).unwrap();
        let g = backward(&m, &tr, &[0, 0, 0], [1.0, 1.0]).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
        assert!(weighted_ce_loss(&tr.probs, &[0, 0, 0], &[1.0, 1.0]).unwrap() < 1e-12);
    }

    #[test]
    fn doubling_class_weight_doubles_gradient() {
        let m = ModelParams::<f32>::init(Architecture::reduced(), 8).unwrap();
        let x: Vec<f32> = input(4, 360).iter().map(|v| (*v * 200.0) as f32).collect();
        let tr = forward(&m, &x, 1, Mode::Infer).unwrap();
        let g1 = backward(&m, &tr, &[1], [1.0, 1.0]).unwrap();
        let g2 = backward(&m, &tr, &[1], [1.0, 2.0]).unwrap();
        assert!(g1.iter().any(|v| *v != 0.0));
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut m = ModelParams::<f64>::init(Architecture::reduced(), 1).unwrap();
        let x = input(5, 4 * 360);
        let tr = forward(&m, &x, 4, Mode::BatchStats).unwrap();
        let (mean, var) = tr.bn3.stats.clone().unwrap();
        update_running_stats(&mut m, &tr);
        let rm = m.tensor("bn3.running_mean").unwrap();
        let rv = m.tensor("bn3.running_var").unwrap();
        for f in 0..rm.len() {
            assert!((rm[f] - 0.1 * mean[f]).abs() < 1e-15);
            assert!((rv[f] - (0.9 + 0.1 * var[f])).abs() < 1e-15);
        }
        m.validate().unwrap();
    }
}
