//! Frame-level training targets on the model's output grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{Annotation, MaskPolicy, NUM_CLASSES};

/// Output frame rate of the model: 25 Hz features downsampled by three.
pub const MODEL_FRAME_RATE: f64 = 25.0 / 3.0;

// Slack for float products such as 12.0 * 25/3 = 100.00000000000001.
const FRAME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("frame rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("hook mask policy needs valid ranges on the annotation")]
    MissingValidRanges,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGrid {
    pub frame_rate: f64,
    pub num_frames: usize,
    pub duration: f64,
}

/// `num_frames = ceil(duration * frame_rate)`; frame `t` covers
/// `[t / rate, (t + 1) / rate)`.
pub fn make_grid(duration: f64, frame_rate: f64) -> Result<FrameGrid, TargetError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(TargetError::NonPositiveDuration(duration));
    }
    if !(frame_rate > 0.0 && frame_rate.is_finite()) {
        return Err(TargetError::NonPositiveRate(frame_rate));
    }
    let num_frames = (duration * frame_rate - FRAME_EPS).ceil().max(1.0) as usize;
    Ok(FrameGrid { frame_rate, num_frames, duration })
}

impl FrameGrid {
    /// Left-edge time of frame `t`.
    pub fn frame_time(&self, t: usize) -> f64 {
        t as f64 / self.frame_rate
    }

    /// Index of the first frame whose left edge is at or after `time`.
    pub fn first_frame_at_or_after(&self, time: f64) -> usize {
        (time * self.frame_rate - FRAME_EPS).ceil().max(0.0) as usize
    }

    /// Frame nearest to `time`.
    pub fn nearest_frame(&self, time: f64) -> usize {
        (time * self.frame_rate).round().max(0.0) as usize
    }
}

/// Boundary times that receive positive targets: every segment start after
/// the first, plus the first start when it is not at zero. The end time is
/// never a target.
pub fn target_boundaries(ann: &Annotation) -> Vec<f64> {
    ann.starts().enumerate().filter(|&(i, t)| i > 0 || t > 0.0).map(|(_, t)| t).collect()
}

/// Gaussian-smoothed boundary curve: each boundary contributes
/// `exp(-d^2 / (2 sigma^2))` within `half_width` frames of its nearest frame,
/// with `sigma = half_width / 3`; contributions combine by pointwise max.
pub fn boundary_targets(ann: &Annotation, grid: &FrameGrid, half_width: usize) -> Vec<f64> {
    let half_width = half_width.max(1);
    let sigma = half_width as f64 / 3.0;
    let mut out = vec![0.0f64; grid.num_frames];
    for b in target_boundaries(ann) {
        let center = grid.nearest_frame(b) as isize;
        let lo = (center - half_width as isize).max(0);
        let hi = (center + half_width as isize).min(grid.num_frames as isize - 1);
        for t in lo..=hi {
            let d = (t - center) as f64;
            let v = (-(d * d) / (2.0 * sigma * sigma)).exp();
            let slot = &mut out[t as usize];
            *slot = slot.max(v);
        }
    }
    out
}

/// Class index of the segment containing each frame's left edge.
pub fn function_targets(ann: &Annotation, grid: &FrameGrid) -> Vec<usize> {
    let segs = ann.segments();
    let mut out = Vec::with_capacity(grid.num_frames);
    let mut seg = 0;
    for t in 0..grid.num_frames {
        while seg + 1 < segs.len() && t >= grid.first_frame_at_or_after(segs[seg + 1].start) {
            seg += 1;
        }
        out.push(segs[seg].label.index());
    }
    out
}

/// Frames whose left edge lies in any `[a - dilation, b + dilation)` window,
/// clamped to the grid.
fn dilated_range_mask(ranges: &[(f64, f64)], grid: &FrameGrid, dilation: f64) -> Vec<bool> {
    let mut mask = vec![false; grid.num_frames];
    for &(a, b) in ranges {
        let lo = grid.first_frame_at_or_after((a - dilation).max(0.0));
        let hi = grid.first_frame_at_or_after((b + dilation).min(grid.duration)).min(grid.num_frames);
        for m in mask.iter_mut().take(hi).skip(lo) {
            *m = true;
        }
    }
    mask
}

/// `(boundary_mask, function_mask)` for a mask policy. Hook masks cover the
/// valid ranges dilated by `hook_dilation` seconds on each side.
pub fn loss_masks(
    ann: &Annotation,
    grid: &FrameGrid,
    policy: MaskPolicy,
    hook_dilation: f64,
) -> Result<(Vec<bool>, Vec<bool>), TargetError> {
    let n = grid.num_frames;
    match policy {
        MaskPolicy::Full => Ok((vec![true; n], vec![true; n])),
        MaskPolicy::Gem => Ok((vec![false; n], vec![true; n])),
        MaskPolicy::Hook => {
            let ranges = ann.valid_ranges().ok_or(TargetError::MissingValidRanges)?;
            let mask = dilated_range_mask(ranges, grid, hook_dilation);
            Ok((mask.clone(), mask))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetConfig {
    /// Boundary smoothing half-width in frames (sigma = half_width / 3).
    pub half_width: usize,
    /// Seconds added on each side of hook valid ranges.
    pub hook_dilation: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig { half_width: 10, hook_dilation: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTargets {
    pub boundary: Vec<f64>,
    pub function: Vec<usize>,
    pub boundary_mask: Vec<bool>,
    pub function_mask: Vec<bool>,
    pub grid: FrameGrid,
}

impl FrameTargets {
    pub fn len(&self) -> usize {
        self.grid.num_frames
    }

    pub fn is_empty(&self) -> bool {
        self.grid.num_frames == 0
    }

    /// Right-pads every array to `len` frames with masked-out entries.
    pub fn padded(&self, len: usize) -> FrameTargets {
        let mut out = self.clone();
        if len > out.boundary.len() {
            out.boundary.resize(len, 0.0);
            out.function.resize(len, 0);
            out.boundary_mask.resize(len, false);
            out.function_mask.resize(len, false);
        }
        out
    }
}

pub fn make_targets(
    ann: &Annotation,
    grid: &FrameGrid,
    policy: MaskPolicy,
    cfg: &TargetConfig,
) -> Result<FrameTargets, TargetError> {
    let (boundary_mask, function_mask) = loss_masks(ann, grid, policy, cfg.hook_dilation)?;
    let function = function_targets(ann, grid);
    debug_assert!(function.iter().all(|&c| c < NUM_CLASSES));
    Ok(FrameTargets {
        boundary: boundary_targets(ann, grid, cfg.half_width),
        function,
        boundary_mask,
        function_mask,
        grid: *grid,
    })
}
