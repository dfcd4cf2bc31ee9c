//! Multi-resolution fusion: local 30 s chunks are concatenated in time to
//! line up with the 420 s global window, local and global features are
//! concatenated along the feature axis per extractor, then extractors are
//! concatenated in configured order.

use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureTensor, Result, WindowKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub use_local: bool,
    pub use_global: bool,
    pub extractors: Vec<String>,
    pub chunk_seconds: f64,
    pub global_seconds: f64,
    pub chunks_per_global: usize,
    pub downsample_factor: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            use_local: true,
            use_global: true,
            extractors: vec!["muq".into(), "musicfm".into()],
            chunk_seconds: 30.0,
            global_seconds: 420.0,
            chunks_per_global: 14,
            downsample_factor: 3,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.use_local && !self.use_global {
            return Err(FeatureError::BadConfig("neither local nor global features enabled".into()));
        }
        if (self.chunks_per_global as f64 * self.chunk_seconds - self.global_seconds).abs() > 1e-9 {
            return Err(FeatureError::BadConfig(format!(
                "{} chunks of {} s do not cover the {} s global window",
                self.chunks_per_global, self.chunk_seconds, self.global_seconds
            )));
        }
        if self.downsample_factor == 0 {
            return Err(FeatureError::BadConfig("downsample factor must be >= 1".into()));
        }
        Ok(())
    }
}

/// Window configurations from the multi-resolution ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowPreset {
    /// 30 s and 420 s features, 420 s model input.
    LocalGlobal420,
    /// 30 s features, 30 s model input.
    Local30,
    /// 420 s features, 420 s model input.
    Global420,
    /// 30 s features concatenated to a 420 s model input.
    Local420,
}

impl WindowPreset {
    pub const ALL: [WindowPreset; 4] =
        [WindowPreset::LocalGlobal420, WindowPreset::Local30, WindowPreset::Global420, WindowPreset::Local420];

    pub fn apply(self, base: &FusionConfig) -> FusionConfig {
        let (use_local, use_global) = match self {
            WindowPreset::LocalGlobal420 => (true, true),
            WindowPreset::Local30 | WindowPreset::Local420 => (true, false),
            WindowPreset::Global420 => (false, true),
        };
        FusionConfig { use_local, use_global, ..base.clone() }
    }

    /// Longest model input in seconds.
    pub fn input_seconds(self) -> f64 {
        match self {
            WindowPreset::Local30 => 30.0,
            _ => 420.0,
        }
    }
}

/// Concatenates consecutive local chunks along time.
pub fn assemble_local(chunks: &[FeatureTensor], cfg: &FusionConfig) -> Result<FeatureTensor> {
    let first = chunks.first().ok_or(FeatureError::NothingToFuse)?;
    if chunks.len() > cfg.chunks_per_global {
        return Err(FeatureError::MismatchedDims(format!(
            "{} chunks exceed the {} that fit one global window",
            chunks.len(),
            cfg.chunks_per_global
        )));
    }
    for (i, c) in chunks.iter().enumerate() {
        if c.dims() != first.dims() {
            return Err(FeatureError::MismatchedDims(format!("chunk {i} has D={}, chunk 0 has D={}", c.dims(), first.dims())));
        }
        if c.frame_rate() != first.frame_rate() {
            return Err(FeatureError::MismatchedDims(format!(
                "chunk {i} runs at {} Hz, chunk 0 at {} Hz",
                c.frame_rate(),
                first.frame_rate()
            )));
        }
    }
    let views: Vec<_> = chunks.iter().map(|c| c.data().view()).collect();
    let data = concatenate(Axis(0), &views).map_err(|e| FeatureError::MismatchedDims(e.to_string()))?;
    FeatureTensor::new(data, first.frame_rate(), first.extractor_id(), WindowKind::Local30)
}

/// Splits a tensor into consecutive chunks of at most `chunk_frames` rows.
pub fn split_chunks(tensor: &FeatureTensor, chunk_frames: usize) -> Vec<FeatureTensor> {
    let chunk_frames = chunk_frames.max(1);
    (0..tensor.frames())
        .step_by(chunk_frames)
        .map(|start| {
            let stop = (start + chunk_frames).min(tensor.frames());
            let data = tensor.data().slice(s![start..stop, ..]).to_owned();
            FeatureTensor::new(data, tensor.frame_rate(), tensor.extractor_id(), tensor.window()).expect("slice of a valid tensor")
        })
        .collect()
}

/// Fusion result; `truncated_frames` counts rows dropped to align lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub tensor: FeatureTensor,
    pub truncated_frames: usize,
}

fn concat_features(parts: &[&FeatureTensor], extractor_id: &str) -> Result<Fused> {
    let first = parts.first().ok_or(FeatureError::NothingToFuse)?;
    if let Some(p) = parts.iter().find(|p| p.frame_rate() != first.frame_rate()) {
        return Err(FeatureError::MismatchedDims(format!(
            "frame rates {} and {} differ",
            first.frame_rate(),
            p.frame_rate()
        )));
    }
    let frames = parts.iter().map(|p| p.frames()).min().unwrap();
    let truncated_frames = parts.iter().map(|p| p.frames() - frames).sum();
    if truncated_frames > 0 {
        log::warn!("fusion truncated {truncated_frames} frames to align lengths at T={frames}");
    }
    let views: Vec<_> = parts.iter().map(|p| p.data().slice(s![..frames, ..])).collect();
    let data: Array2<f32> = concatenate(Axis(1), &views).map_err(|e| FeatureError::MismatchedDims(e.to_string()))?;
    let window = if parts.iter().any(|p| p.window() == WindowKind::Global420) {
        WindowKind::Global420
    } else {
        WindowKind::Local30
    };
    Ok(Fused { tensor: FeatureTensor::new(data, first.frame_rate(), extractor_id, window)?, truncated_frames })
}

/// Fuses one extractor's local and global features along the feature axis.
/// Windows disabled in `cfg` are ignored; lengths are min-truncated.
pub fn fuse(local: Option<&FeatureTensor>, global: Option<&FeatureTensor>, cfg: &FusionConfig) -> Result<Fused> {
    cfg.validate()?;
    let parts: Vec<&FeatureTensor> = [local.filter(|_| cfg.use_local), global.filter(|_| cfg.use_global)]
        .into_iter()
        .flatten()
        .collect();
    let id = parts.first().map(|p| p.extractor_id().to_string()).unwrap_or_default();
    concat_features(&parts, &id)
}

#[derive(Debug, Clone)]
pub struct ExtractorFeatures {
    pub extractor_id: String,
    pub local: Option<FeatureTensor>,
    pub global: Option<FeatureTensor>,
}

/// Fuses every configured extractor (in `cfg.extractors` order), then
/// concatenates the per-extractor results along the feature axis.
pub fn fuse_extractors(inputs: &[ExtractorFeatures], cfg: &FusionConfig) -> Result<Fused> {
    cfg.validate()?;
    let mut fused = Vec::with_capacity(cfg.extractors.len());
    let mut truncated = 0;
    for id in &cfg.extractors {
        let input = inputs
            .iter()
            .find(|e| &e.extractor_id == id)
            .ok_or_else(|| FeatureError::BadConfig(format!("no features for extractor `{id}`")))?;
        let f = fuse(input.local.as_ref(), input.global.as_ref(), cfg)?;
        truncated += f.truncated_frames;
        fused.push(f.tensor);
    }
    let refs: Vec<&FeatureTensor> = fused.iter().collect();
    let mut out = concat_features(&refs, &cfg.extractors.join("+"))?;
    out.truncated_frames += truncated;
    Ok(out)
}
