//! From head outputs to an annotation: peak picking on the boundary curve,
//! then one label per segment by averaged class probabilities.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featio::FeatureTensor;
use crate::losses::sigmoid;
use crate::network::{ForwardOutput, Network, NetworkError};
use crate::schema::{Annotation, Label, SchemaError, Segment, SourceId};
use crate::targets::FrameGrid;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    BadConfig(String),
    #[error("no frames to decode")]
    NoFrames,
    #[error("{what}: {got} frames, grid has {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

pub type Result<T> = std::result::Result<T, DecodeError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Frames on each side a peak must dominate.
    pub peak_window: usize,
    pub prob_threshold: f64,
    /// Minimum distance between accepted peaks, frames.
    pub min_gap: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { peak_window: 6, prob_threshold: 0.3, min_gap: 8 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.peak_window == 0 || self.min_gap == 0 {
            return Err(DecodeError::BadConfig("peak_window and min_gap must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.prob_threshold) {
            return Err(DecodeError::BadConfig(format!("prob_threshold {} outside [0, 1]", self.prob_threshold)));
        }
        Ok(())
    }
}

/// Frames that are local maxima of `p` within `window` on each side (a
/// plateau counts for its earliest frame) and reach `threshold`.
/// Frame 0 is never a candidate.
pub fn peak_candidates(p: &[f64], window: usize, threshold: f64) -> Vec<usize> {
    let n = p.len();
    (1..n)
        .filter(|&t| {
            p[t] >= threshold
                && (1..=window).all(|k| {
                    let before = t < k || p[t] > p[t - k];
                    let after = t + k >= n || p[t] >= p[t + k];
                    before && after
                })
        })
        .collect()
}

/// Greedy suppression: visit candidates by descending probability (earlier
/// frame first on ties), keep each one at least `min_gap` frames from all
/// kept ones. Returns kept frames in time order.
pub fn suppress(p: &[f64], candidates: &[usize], min_gap: usize) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for t in order {
        if kept.iter().all(|&a| t.abs_diff(a) >= min_gap) {
            kept.push(t);
        }
    }
    kept.sort_unstable();
    kept
}

/// Boundary times in seconds, starting with 0 and ending with the duration.
pub fn pick_boundaries(boundary_logits: ArrayView1<f64>, grid: &FrameGrid, cfg: &DecodeConfig) -> Vec<f64> {
    let p: Vec<f64> = boundary_logits.iter().map(|&z| sigmoid(z)).collect();
    let candidates = peak_candidates(&p, cfg.peak_window, cfg.prob_threshold);
    let mut times = vec![0.0];
    times.extend(
        suppress(&p, &candidates, cfg.min_gap)
            .into_iter()
            .map(|t| grid.frame_time(t))
            .filter(|&s| s > 0.0 && s < grid.duration),
    );
    times.push(grid.duration);
    times
}

fn argmax_lowest(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Labels each segment between consecutive `boundaries` with the class of
/// highest mean softmax probability over the frames whose left edge falls
/// inside it. Segments holding no frame merge into the next one (the last
/// into the previous one).
pub fn label_segments(
    function_logits: ArrayView2<f64>,
    boundaries: &[f64],
    grid: &FrameGrid,
    source: SourceId,
) -> Result<Annotation> {
    let n = function_logits.nrows().min(grid.num_frames);
    if n == 0 {
        return Err(DecodeError::NoFrames);
    }
    if boundaries.len() < 2 {
        return Err(DecodeError::BadConfig("need at least a start and an end boundary".into()));
    }
    let frame_of = |t: f64| grid.first_frame_at_or_after(t).min(n);

    // (start time, first frame, end frame)
    let mut pieces: Vec<(f64, usize, usize)> = Vec::new();
    let mut pending: Option<f64> = None;
    for w in boundaries.windows(2) {
        let (lo, hi) = (frame_of(w[0]), frame_of(w[1]));
        let start = pending.unwrap_or(w[0]);
        if hi > lo {
            pieces.push((start, lo, hi));
            pending = None;
        } else {
            pending = Some(start);
        }
    }
    if pending.is_some() {
        match pieces.last_mut() {
            Some(last) => last.2 = n,
            None => pieces.push((boundaries[0], 0, n)),
        }
    }

    let mut segments = Vec::with_capacity(pieces.len());
    for (start, lo, hi) in pieces {
        let mut mean = Array1::<f64>::zeros(function_logits.ncols());
        for t in lo..hi {
            let row = function_logits.row(t);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e = row.mapv(|v| (v - max).exp());
            mean += &(&e / e.sum());
        }
        let class = argmax_lowest(&mean);
        let label = Label::from_index(class).unwrap_or(Label::Silence);
        segments.push(Segment::new(start, label));
    }
    let end = boundaries[boundaries.len() - 1];
    Ok(Annotation::new(segments, end, source)?)
}

/// Output-frame grid for a feature tensor after downsampling by `factor`.
pub fn output_grid(x: &FeatureTensor, frames_out: usize, factor: usize) -> FrameGrid {
    FrameGrid { frame_rate: x.frame_rate() / factor as f64, num_frames: frames_out, duration: x.duration() }
}

/// Decodes existing head outputs into an annotation.
pub fn decode_output(out: &ForwardOutput, grid: &FrameGrid, cfg: &DecodeConfig) -> Result<Annotation> {
    cfg.validate()?;
    if out.frames_out != grid.num_frames {
        return Err(DecodeError::LengthMismatch { what: "head output", got: out.frames_out, expected: grid.num_frames });
    }
    let bounds = pick_boundaries(out.boundary_logits.view(), grid, cfg);
    label_segments(out.function_logits.view(), &bounds, grid, SourceId::HX)
}

/// Runs the model with the source fixed to [`SourceId::HX`] and decodes.
/// Returns the raw head outputs too.
pub fn predict(x: &FeatureTensor, model: &Network, cfg: &DecodeConfig) -> Result<(ForwardOutput, Annotation)> {
    let out = model.forward(x.to_f64().view(), SourceId::HX)?;
    let grid = output_grid(x, out.frames_out, model.config.downsample_factor);
    let ann = decode_output(&out, &grid, cfg)?;
    Ok((out, ann))
}

pub fn infer(x: &FeatureTensor, model: &Network, cfg: &DecodeConfig) -> Result<Annotation> {
    Ok(predict(x, model, cfg)?.1)
}
