//! Building blocks with their backward passes.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};

pub(crate) struct NormCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

/// Row-wise layer normalization.
pub(crate) fn layer_norm(x: ArrayView2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>, eps: f64) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + eps).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let y = &xhat * gamma + beta;
    (y, NormCache { xhat, rstd })
}

/// Returns the input gradient; accumulates gain and bias gradients.
pub(crate) fn layer_norm_backward(
    gy: ArrayView2<f64>,
    cache: &NormCache,
    gamma: &Array1<f64>,
    g_gamma: &mut Array1<f64>,
    g_beta: &mut Array1<f64>,
) -> Array2<f64> {
    *g_gamma += &(&gy * &cache.xhat).sum_axis(Axis(0));
    *g_beta += &gy.sum_axis(Axis(0));
    let d = gy.ncols() as f64;
    let mut gx = &gy * gamma;
    for ((mut row, xh), &rs) in gx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.rstd.iter()) {
        let mean_g = row.sum() / d;
        let mean_gx = row.iter().zip(xh.iter()).map(|(g, x)| g * x).sum::<f64>() / d;
        for (g, &x) in row.iter_mut().zip(xh.iter()) {
            *g = rs * (*g - mean_g - x * mean_gx);
        }
    }
    gx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_K * u * u * u)).tanh())
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_K * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * u * u)
}

/// Cos/sin tables for rotary position embeddings: `positions x head_dim/2`.
pub(crate) struct RopeTable {
    pub cos: Array2<f64>,
    pub sin: Array2<f64>,
}

impl RopeTable {
    pub fn new(positions: usize, head_dim: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let mut cos = Array2::zeros((positions, half));
        let mut sin = Array2::zeros((positions, half));
        for p in 0..positions {
            for i in 0..half {
                let angle = p as f64 * rope_frequency(i, head_dim, base);
                cos[[p, i]] = angle.cos();
                sin[[p, i]] = angle.sin();
            }
        }
        RopeTable { cos, sin }
    }
}

fn rope_frequency(pair: usize, head_dim: usize, base: f64) -> f64 {
    base.powf(-2.0 * pair as f64 / head_dim as f64)
}

/// Rotates `(x0, x1)` by `angle`.
pub fn rope_rotate_pair(x0: f64, x1: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (x0 * c - x1 * s, x0 * s + x1 * c)
}

/// Applies rotary embedding at absolute position `pos` to one head vector
/// (consecutive pairs `(2i, 2i+1)` rotate at frequency `base^(-2i/len)`).
pub fn apply_rope(vec: &[f64], pos: f64, base: f64) -> Vec<f64> {
    let dim = vec.len();
    let mut out = vec.to_vec();
    for i in 0..dim / 2 {
        let (a, b) = rope_rotate_pair(vec[2 * i], vec[2 * i + 1], pos * rope_frequency(i, dim, base));
        out[2 * i] = a;
        out[2 * i + 1] = b;
    }
    out
}

/// Scaled dot-product score between a query at `pos_q` and a key at `pos_k`
/// after rotary embedding.
pub fn attention_score(q: &[f64], pos_q: f64, k: &[f64], pos_k: f64, base: f64) -> f64 {
    let rq = apply_rope(q, pos_q, base);
    let rk = apply_rope(k, pos_k, base);
    rq.iter().zip(&rk).map(|(a, b)| a * b).sum::<f64>() / (q.len() as f64).sqrt()
}

/// Rotates every head of every row in place. `inverse` applies the
/// transpose rotation (used to push gradients back through the embedding).
pub(crate) fn rope_in_place(x: &mut ArrayViewMut2<f64>, n_heads: usize, table: &RopeTable, inverse: bool) {
    let head_dim = x.ncols() / n_heads;
    let half = head_dim / 2;
    for (p, mut row) in x.rows_mut().into_iter().enumerate() {
        for h in 0..n_heads {
            let base = h * head_dim;
            for i in 0..half {
                let (c, mut s) = (table.cos[[p, i]], table.sin[[p, i]]);
                if inverse {
                    s = -s;
                }
                let (a, b) = (row[base + 2 * i], row[base + 2 * i + 1]);
                row[base + 2 * i] = a * c - b * s;
                row[base + 2 * i + 1] = a * s + b * c;
            }
        }
    }
}

pub(crate) fn softmax_rows_in_place(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("contiguous row"));
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Multi-head self-attention over already-rotated queries and keys.
/// Returns the concatenated head outputs and each head's probabilities.
pub(crate) fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, n_heads: usize) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (n, d) = q.dim();
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut ctx = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores *= scale;
        softmax_rows_in_place(&mut scores);
        ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    (ctx, probs)
}

/// Gradients of [`attention`] with respect to rotated queries, keys and values.
pub(crate) fn attention_backward(
    g_ctx: &Array2<f64>,
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    probs: &[Array2<f64>],
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (n, d) = q.dim();
    let n_heads = probs.len();
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut gq = Array2::zeros((n, d));
    let mut gk = Array2::zeros((n, d));
    let mut gv = Array2::zeros((n, d));
    for (h, p) in probs.iter().enumerate() {
        let cols = s![.., h * hd..(h + 1) * hd];
        let go = g_ctx.slice(cols);
        gv.slice_mut(cols).assign(&p.t().dot(&go));
        let mut gs = go.dot(&v.slice(cols).t());
        for (mut grow, prow) in gs.rows_mut().into_iter().zip(p.rows()) {
            let dot: f64 = grow.iter().zip(prow.iter()).map(|(g, p)| g * p).sum();
            for (g, &pv) in grow.iter_mut().zip(prow.iter()) {
                *g = pv * (*g - dot) * scale;
            }
        }
        gq.slice_mut(cols).assign(&gs.dot(&k.slice(cols)));
        gk.slice_mut(cols).assign(&gs.t().dot(&q.slice(cols)));
    }
    (gq, gk, gv)
}
