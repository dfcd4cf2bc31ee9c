//! Training objective: masked BCE and total-variation smoothing on the
//! boundary head, masked cross-entropy and focal loss on the function head.
//!
//! ```text
//! total = lambda * (bce + lambda_tv * tv) + (1 - lambda) * (ce + lambda_focal * focal)
//! ```
//!
//! Every loss has an analytic gradient with respect to the logits.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{ForwardOutput, OutputGrad};
use crate::targets::FrameTargets;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{what}: length {got}, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("frame {frame}: class {class} out of range for {classes} classes")]
    BadClassIndex { frame: usize, class: usize, classes: usize },
    #[error("total variation needs at least 2 frames, got {0}")]
    TooShort(usize),
    #[error("invalid loss weights: {0}")]
    BadWeights(String),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda: f64,
    pub lambda_tv: f64,
    pub lambda_focal: f64,
    pub tv_beta: f64,
    pub tv_alpha: f64,
    pub tv_region_threshold: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.2,
            lambda_tv: 0.05,
            lambda_focal: 0.2,
            tv_beta: 0.6,
            tv_alpha: 0.1,
            tv_region_threshold: 0.01,
            focal_gamma: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda", self.lambda),
            ("lambda_tv", self.lambda_tv),
            ("lambda_focal", self.lambda_focal),
            ("tv_beta", self.tv_beta),
            ("tv_alpha", self.tv_alpha),
            ("tv_region_threshold", self.tv_region_threshold),
            ("focal_gamma", self.focal_gamma),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LossError::BadWeights(format!("{name} = {v}")));
            }
        }
        if self.lambda > 1.0 {
            return Err(LossError::BadWeights(format!("lambda = {} exceeds 1", self.lambda)));
        }
        Ok(())
    }

    /// Combines the four parts.
    pub fn combine(&self, bce: f64, tv: f64, ce: f64, focal: f64) -> LossBreakdown {
        let total = self.lambda * (bce + self.lambda_tv * tv) + (1.0 - self.lambda) * (ce + self.lambda_focal * focal);
        LossBreakdown { bce, tv, ce, focal, total }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub tv: f64,
    pub ce: f64,
    pub focal: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Field-wise mean; the total stays the same combination of the parts.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown { bce: sum(|b| b.bce), tv: sum(|b| b.tv), ce: sum(|b| b.ce), focal: sum(|b| b.focal), total: sum(|b| b.total) }
    }
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(LossError::LengthMismatch { what, got, expected });
    }
    Ok(())
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn log_softmax(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.mapv(|v| v - lse)
}

fn mask_count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&m| m).count()
}

/// Masked binary cross-entropy with soft targets, plus its logit gradient.
pub fn bce_with_grad(logits: ArrayView1<f64>, targets: &[f64], mask: &[bool]) -> Result<(f64, Array1<f64>)> {
    check_len("bce targets", targets.len(), logits.len())?;
    check_len("bce mask", mask.len(), logits.len())?;
    let mut grad = Array1::zeros(logits.len());
    let n = mask_count(mask);
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / n as f64;
    let mut sum = 0.0;
    for t in 0..logits.len() {
        if !mask[t] {
            continue;
        }
        let (z, y) = (logits[t], targets[t]);
        // -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
        sum += softplus(z) - y * z;
        grad[t] = (sigmoid(z) - y) * inv;
    }
    Ok((sum * inv, grad))
}

pub fn bce_loss(logits: ArrayView1<f64>, targets: &[f64], mask: &[bool]) -> Result<f64> {
    Ok(bce_with_grad(logits, targets, mask)?.0)
}

/// Total-variation penalty on probabilities, with the gradient with respect
/// to `p`. Differences touching a frame where `mask` is false are dropped,
/// and the sum is averaged over the remaining differences.
pub fn tv_with_grad(
    p: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    mask: Option<ArrayView2<bool>>,
    w: &LossWeights,
) -> Result<(f64, Array2<f64>)> {
    let (b, t) = p.dim();
    check_len("tv targets rows", targets.nrows(), b)?;
    check_len("tv targets frames", targets.ncols(), t)?;
    if let Some(m) = &mask {
        check_len("tv mask rows", m.nrows(), b)?;
        check_len("tv mask frames", m.ncols(), t)?;
    }
    if t < 2 {
        return Err(LossError::TooShort(t));
    }
    let active = |r: usize, i: usize| mask.as_ref().is_none_or(|m| m[[r, i]] && m[[r, i + 1]]);
    let count = (0..b).flat_map(|r| (0..t - 1).map(move |i| (r, i))).filter(|&(r, i)| active(r, i)).count();
    let mut grad = Array2::zeros((b, t));
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    for r in 0..b {
        for i in 0..t - 1 {
            if !active(r, i) {
                continue;
            }
            let d = p[[r, i + 1]] - p[[r, i]];
            if d == 0.0 {
                continue;
            }
            let in_region = targets[[r, i]] > w.tv_region_threshold || targets[[r, i + 1]] > w.tv_region_threshold;
            let weight = if in_region { w.tv_alpha } else { 1.0 };
            let a = d.abs();
            sum += weight * a.powf(w.tv_beta);
            let g = weight * w.tv_beta * a.powf(w.tv_beta - 1.0) * d.signum() * inv;
            grad[[r, i + 1]] += g;
            grad[[r, i]] -= g;
        }
    }
    Ok((sum * inv, grad))
}

/// Unmasked total-variation penalty over a batch of probability curves.
pub fn tv_loss(p: ArrayView2<f64>, targets: ArrayView2<f64>, w: &LossWeights) -> Result<f64> {
    Ok(tv_with_grad(p, targets, None, w)?.0)
}

fn check_classes(logits: &ArrayView2<f64>, classes: &[usize], mask: &[bool]) -> Result<()> {
    check_len("class targets", classes.len(), logits.nrows())?;
    check_len("function mask", mask.len(), logits.nrows())?;
    let c = logits.ncols();
    for (frame, (&class, &m)) in classes.iter().zip(mask).enumerate() {
        if m && class >= c {
            return Err(LossError::BadClassIndex { frame, class, classes: c });
        }
    }
    Ok(())
}

/// Masked cross-entropy and focal loss together, each with its gradient.
pub fn ce_focal_with_grad(
    logits: ArrayView2<f64>,
    classes: &[usize],
    mask: &[bool],
    gamma: f64,
) -> Result<(f64, Array2<f64>, f64, Array2<f64>)> {
    check_classes(&logits, classes, mask)?;
    let mut g_ce = Array2::zeros(logits.dim());
    let mut g_focal = Array2::zeros(logits.dim());
    let n = mask_count(mask);
    if n == 0 {
        return Ok((0.0, g_ce, 0.0, g_focal));
    }
    let inv = 1.0 / n as f64;
    let (mut ce, mut focal) = (0.0, 0.0);
    for (t, row) in logits.axis_iter(Axis(0)).enumerate() {
        if !mask[t] {
            continue;
        }
        let c = classes[t];
        let logp = log_softmax(row);
        let probs = logp.mapv(f64::exp);
        let (lp, pc) = (logp[c], probs[c]);
        let q = 1.0 - pc;
        ce -= lp;
        let mod_factor = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
        focal -= mod_factor * lp;
        // d focal / d z_j = coef * (delta_cj - p_j)
        let dpow = if gamma == 0.0 || q == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) * pc * lp };
        let coef = dpow - mod_factor;
        for j in 0..row.len() {
            let delta = if j == c { 1.0 } else { 0.0 };
            g_ce[[t, j]] = (probs[j] - delta) * inv;
            g_focal[[t, j]] = coef * (delta - probs[j]) * inv;
        }
    }
    Ok((ce * inv, g_ce, focal * inv, g_focal))
}

pub fn ce_loss(logits: ArrayView2<f64>, classes: &[usize], mask: &[bool]) -> Result<f64> {
    Ok(ce_focal_with_grad(logits, classes, mask, 0.0)?.0)
}

pub fn focal_loss(logits: ArrayView2<f64>, classes: &[usize], mask: &[bool], gamma: f64) -> Result<f64> {
    Ok(ce_focal_with_grad(logits, classes, mask, gamma)?.2)
}

/// Full objective for one track, with its gradient with respect to both heads.
pub fn total_loss_with_grad(out: &ForwardOutput, tgt: &FrameTargets, w: &LossWeights) -> Result<(LossBreakdown, OutputGrad)> {
    let t = out.frames_out;
    check_len("boundary targets", tgt.boundary.len(), t)?;
    let z = out.boundary_logits.view();
    let (bce, g_bce) = bce_with_grad(z, &tgt.boundary, &tgt.boundary_mask)?;

    let (tv, g_tv_z) = if t >= 2 {
        let p = z.mapv(sigmoid);
        let p2 = p.view().insert_axis(Axis(0));
        let y2 = ArrayView2::from_shape((1, t), &tgt.boundary).expect("length checked");
        let m2 = ArrayView2::from_shape((1, t), &tgt.boundary_mask).expect("length checked");
        let (tv, g_p) = tv_with_grad(p2, y2, Some(m2), w)?;
        let g = g_p.row(0).to_owned() * &p.mapv(|v| v * (1.0 - v));
        (tv, g)
    } else {
        (0.0, Array1::zeros(t))
    };

    let (ce, g_ce, focal, g_focal) = ce_focal_with_grad(out.function_logits.view(), &tgt.function, &tgt.function_mask, w.focal_gamma)?;

    let parts = w.combine(bce, tv, ce, focal);
    let boundary = (g_bce + &(g_tv_z * w.lambda_tv)) * w.lambda;
    let function = (g_ce + &(g_focal * w.lambda_focal)) * (1.0 - w.lambda);
    Ok((parts, OutputGrad { boundary, function }))
}

pub fn total_loss(out: &ForwardOutput, tgt: &FrameTargets, w: &LossWeights) -> Result<LossBreakdown> {
    Ok(total_loss_with_grad(out, tgt, w)?.0)
}
