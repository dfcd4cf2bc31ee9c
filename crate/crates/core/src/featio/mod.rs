//! Feature tensors: the SFF1 file format, multi-resolution fusion, and a
//! seeded synthetic song generator.

mod fusion;
mod sff;
mod synth;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fusion::{assemble_local, fuse, fuse_extractors, split_chunks, ExtractorFeatures, Fused, FusionConfig, WindowPreset};
pub use sff::{decode_sff, encode_sff, read_feature_file, write_feature_file, SFF_MAGIC, SFF_VERSION};
pub use synth::{class_means, synth_song, SynthSpec};

/// Frame rate of the self-supervised feature extractors.
pub const FEATURE_FRAME_RATE: f64 = 25.0;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("bad magic {0:?}, expected \"SFF1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported SFF version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("dimensions {frames}x{dims} overflow the addressable size")]
    DimensionOverflow { frames: u64, dims: u64 },
    #[error("invalid tensor: {0}")]
    Invalid(String),
    #[error("mismatched dimensions: {0}")]
    MismatchedDims(String),
    #[error("nothing to fuse: no enabled window has features")]
    NothingToFuse,
    #[error("invalid fusion config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Analysis window an extractor ran with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Consecutive 30 s chunks.
    Local30,
    /// One 420 s window.
    Global420,
}

impl WindowKind {
    pub fn code(self) -> u8 {
        match self {
            WindowKind::Local30 => 0,
            WindowKind::Global420 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(WindowKind::Local30),
            1 => Some(WindowKind::Global420),
            _ => None,
        }
    }
}

/// A `T x D` feature matrix at a declared frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    data: Array2<f32>,
    frame_rate: f64,
    extractor_id: String,
    window: WindowKind,
}

impl FeatureTensor {
    pub fn new(data: Array2<f32>, frame_rate: f64, extractor_id: impl Into<String>, window: WindowKind) -> Result<Self> {
        let (t, d) = data.dim();
        if t == 0 || d == 0 {
            return Err(FeatureError::Invalid(format!("shape {t}x{d} has an empty axis")));
        }
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(FeatureError::Invalid(format!("frame rate {frame_rate}")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::Invalid(format!("non-finite value at flat index {pos}")));
        }
        let extractor_id = extractor_id.into();
        if extractor_id.len() > u16::MAX as usize {
            return Err(FeatureError::Invalid("extractor id longer than 65535 bytes".into()));
        }
        Ok(FeatureTensor { data, frame_rate, extractor_id, window })
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dims(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn extractor_id(&self) -> &str {
        &self.extractor_id
    }

    pub fn window(&self) -> WindowKind {
        self.window
    }

    pub fn duration(&self) -> f64 {
        self.frames() as f64 / self.frame_rate
    }

    /// 64-bit copy for model computation.
    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }

    /// First `frames` rows (no-op when already shorter).
    pub fn truncated(&self, frames: usize) -> FeatureTensor {
        let keep = frames.clamp(1, self.frames());
        FeatureTensor {
            data: self.data.slice(ndarray::s![..keep, ..]).to_owned(),
            ..self.clone()
        }
    }
}
