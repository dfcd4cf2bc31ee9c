//! # msa-core
//!
//! Music structure analysis at desk scale: given frame-level audio features
//! (precomputed or synthetic), predict where sections begin and what each
//! section is (intro, verse, chorus, ...).
//!
//! The pipeline is:
//!
//! ```text
//! features (25 Hz) -> fuse -> downsample x3 -> + source embedding -> RoPE transformer
//!     -> boundary head  -> sigmoid -> peak picking ----+
//!     -> function head  -> softmax -> segment averaging -+-> Annotation
//! ```
//!
//! Modules:
//!
//! - [`schema`]: label vocabulary, annotations, the `.sfa` text format, label mapping profiles
//! - [`targets`]: frame grids, smoothed boundary targets, class targets, loss masks
//! - [`featio`]: the SFF1 feature file format, multi-resolution fusion, synthetic songs
//! - [`network`]: the model with a hand-written backward pass, and checkpoints
//! - [`losses`]: masked BCE, boundary-aware total variation, CE, focal, and their sum
//! - [`trainer`]: warm-up + cosine schedule, Adam, batching, validation and early stopping
//! - [`decode`]: peak picking and segment labeling
//! - [`metrics`]: HR.5F / HR3F boundary F-measures and frame accuracy

pub mod decode;
pub mod featio;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod schema;
pub mod targets;
pub mod trainer;

pub use decode::{infer, DecodeConfig};
pub use featio::{FeatureTensor, FusionConfig, SynthSpec, WindowKind};
pub use losses::{LossBreakdown, LossWeights};
pub use metrics::{evaluate_corpus, MetricReport};
pub use network::{ModelConfig, ModelParams, Network};
pub use schema::{Annotation, Label, MaskPolicy, Segment, SourceId, SourceTable};
pub use targets::{FrameGrid, FrameTargets};
pub use trainer::{lr_at, train, TrainConfig};
