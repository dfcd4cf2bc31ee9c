//! The learnable model and its exact reverse-mode gradients.
//!
//! ```text
//! x (T x D) --+-- depthwise conv (stride f) -- pointwise --+
//!             +-- avg pool (window f)       -- pointwise --+-- + --> h (T/f x d)
//! h + source_embed[src] --> pre-norm RoPE transformer x L --> final norm
//!     --> boundary head (d -> 1), function head (d -> C)
//! ```
//!
//! All computation runs in f64. Parameters are addressed by name through
//! [`ModelParams::tensors`], which enumerates every array exactly once.

mod checkpoint;
mod layers;
mod model;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{SourceId, NUM_CLASSES};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use layers::{apply_rope, attention_score, rope_rotate_pair};
pub use model::{ForwardCache, ForwardOutput, Network, OutputGrad};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("input has {frames} frames, fewer than the downsample factor {factor}")]
    InputTooShort { frames: usize, factor: usize },
    #[error("input has {got} features, model expects {expected}")]
    InputDimMismatch { got: usize, expected: usize },
    #[error("unknown source {0} (table has {1} entries)")]
    UnknownSource(SourceId, usize),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ShapeMismatch { name: String, got: Vec<usize>, expected: Vec<usize> },
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_sources: usize,
    pub n_classes: usize,
    pub downsample_factor: usize,
    pub dw_kernel: usize,
    pub ffn_mult: usize,
    pub rope_base: f64,
    pub norm_eps: f64,
    /// Drop probability on both residual branches during training.
    pub dropout: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 64,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            n_sources: 4,
            n_classes: NUM_CLASSES,
            downsample_factor: 3,
            dw_kernel: 3,
            ffn_mult: 4,
            rope_base: 10_000.0,
            norm_eps: 1e-5,
            dropout: 0.0,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NetworkError::BadConfig(msg));
        if self.input_dim == 0 || self.d_model == 0 || self.n_heads == 0 || self.n_classes == 0 || self.n_sources == 0 {
            return bad("dimensions, heads, classes and sources must be positive".into());
        }
        if self.d_model % (2 * self.n_heads) != 0 {
            return bad(format!("d_model {} is not divisible by 2 x {} heads", self.d_model, self.n_heads));
        }
        if self.downsample_factor == 0 || self.dw_kernel == 0 || self.ffn_mult == 0 {
            return bad("downsample factor, kernel size and ffn multiplier must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    /// Output frames for `frames` input frames.
    pub fn frames_out(&self, frames: usize) -> usize {
        frames / self.downsample_factor
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownsampleParams {
    /// `dw_kernel x input_dim`
    pub dw_weight: Array2<f64>,
    pub dw_bias: Array1<f64>,
    /// `input_dim x d_model`, applied to the depthwise branch.
    pub pw_conv: Array2<f64>,
    /// `input_dim x d_model`, applied to the pooled branch.
    pub pw_pool: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub norm1_gamma: Array1<f64>,
    pub norm1_beta: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub norm2_gamma: Array1<f64>,
    pub norm2_beta: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub down: DownsampleParams,
    /// `n_sources x d_model`
    pub source_embed: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub final_gamma: Array1<f64>,
    pub final_beta: Array1<f64>,
    /// `d_model`
    pub boundary_w: Array1<f64>,
    /// length 1
    pub boundary_b: Array1<f64>,
    /// `d_model x n_classes`
    pub function_w: Array2<f64>,
    pub function_b: Array1<f64>,
}

fn uniform2(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

impl ModelParams {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, unit norm gains,
    /// zero biases, seeded by `cfg.init_seed`.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let (din, d, ffn, c) = (cfg.input_dim, cfg.d_model, cfg.ffn_dim(), cfg.n_classes);
        let scale = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let down = DownsampleParams {
            dw_weight: uniform2(&mut rng, cfg.dw_kernel, din, scale(cfg.dw_kernel)),
            dw_bias: Array1::zeros(din),
            pw_conv: uniform2(&mut rng, din, d, scale(din)),
            pw_pool: uniform2(&mut rng, din, d, scale(din)),
            bias: Array1::zeros(d),
        };
        let source_embed = uniform2(&mut rng, cfg.n_sources, d, 0.1);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                norm1_gamma: Array1::ones(d),
                norm1_beta: Array1::zeros(d),
                wq: uniform2(&mut rng, d, d, scale(d)),
                wk: uniform2(&mut rng, d, d, scale(d)),
                wv: uniform2(&mut rng, d, d, scale(d)),
                wo: uniform2(&mut rng, d, d, scale(d)),
                bo: Array1::zeros(d),
                norm2_gamma: Array1::ones(d),
                norm2_beta: Array1::zeros(d),
                w1: uniform2(&mut rng, d, ffn, scale(d)),
                b1: Array1::zeros(ffn),
                w2: uniform2(&mut rng, ffn, d, scale(ffn)),
                b2: Array1::zeros(d),
            })
            .collect();
        ModelParams {
            down,
            source_embed,
            layers,
            final_gamma: Array1::ones(d),
            final_beta: Array1::zeros(d),
            boundary_w: uniform2(&mut rng, d, 1, scale(d)).into_shape_with_order(d).expect("column"),
            boundary_b: Array1::zeros(1),
            function_w: uniform2(&mut rng, d, c, scale(d)),
            function_b: Array1::zeros(c),
        }
    }

    /// Every parameter array, by name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewD<'_, f64>)> = vec![
            ("down.dw_weight".into(), self.down.dw_weight.view().into_dyn()),
            ("down.dw_bias".into(), self.down.dw_bias.view().into_dyn()),
            ("down.pw_conv".into(), self.down.pw_conv.view().into_dyn()),
            ("down.pw_pool".into(), self.down.pw_pool.view().into_dyn()),
            ("down.bias".into(), self.down.bias.view().into_dyn()),
            ("source_embed".into(), self.source_embed.view().into_dyn()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.extend([
                (p("norm1_gamma"), l.norm1_gamma.view().into_dyn()),
                (p("norm1_beta"), l.norm1_beta.view().into_dyn()),
                (p("wq"), l.wq.view().into_dyn()),
                (p("wk"), l.wk.view().into_dyn()),
                (p("wv"), l.wv.view().into_dyn()),
                (p("wo"), l.wo.view().into_dyn()),
                (p("bo"), l.bo.view().into_dyn()),
                (p("norm2_gamma"), l.norm2_gamma.view().into_dyn()),
                (p("norm2_beta"), l.norm2_beta.view().into_dyn()),
                (p("w1"), l.w1.view().into_dyn()),
                (p("b1"), l.b1.view().into_dyn()),
                (p("w2"), l.w2.view().into_dyn()),
                (p("b2"), l.b2.view().into_dyn()),
            ]);
        }
        out.extend([
            ("final_gamma".into(), self.final_gamma.view().into_dyn()),
            ("final_beta".into(), self.final_beta.view().into_dyn()),
            ("boundary_w".into(), self.boundary_w.view().into_dyn()),
            ("boundary_b".into(), self.boundary_b.view().into_dyn()),
            ("function_w".into(), self.function_w.view().into_dyn()),
            ("function_b".into(), self.function_b.view().into_dyn()),
        ]);
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewMutD<'_, f64>)> = vec![
            ("down.dw_weight".into(), self.down.dw_weight.view_mut().into_dyn()),
            ("down.dw_bias".into(), self.down.dw_bias.view_mut().into_dyn()),
            ("down.pw_conv".into(), self.down.pw_conv.view_mut().into_dyn()),
            ("down.pw_pool".into(), self.down.pw_pool.view_mut().into_dyn()),
            ("down.bias".into(), self.down.bias.view_mut().into_dyn()),
            ("source_embed".into(), self.source_embed.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.extend([
                (p("norm1_gamma"), l.norm1_gamma.view_mut().into_dyn()),
                (p("norm1_beta"), l.norm1_beta.view_mut().into_dyn()),
                (p("wq"), l.wq.view_mut().into_dyn()),
                (p("wk"), l.wk.view_mut().into_dyn()),
                (p("wv"), l.wv.view_mut().into_dyn()),
                (p("wo"), l.wo.view_mut().into_dyn()),
                (p("bo"), l.bo.view_mut().into_dyn()),
                (p("norm2_gamma"), l.norm2_gamma.view_mut().into_dyn()),
                (p("norm2_beta"), l.norm2_beta.view_mut().into_dyn()),
                (p("w1"), l.w1.view_mut().into_dyn()),
                (p("b1"), l.b1.view_mut().into_dyn()),
                (p("w2"), l.w2.view_mut().into_dyn()),
                (p("b2"), l.b2.view_mut().into_dyn()),
            ]);
        }
        out.extend([
            ("final_gamma".into(), self.final_gamma.view_mut().into_dyn()),
            ("final_beta".into(), self.final_beta.view_mut().into_dyn()),
            ("boundary_w".into(), self.boundary_w.view_mut().into_dyn()),
            ("boundary_b".into(), self.boundary_b.view_mut().into_dyn()),
            ("function_w".into(), self.function_w.view_mut().into_dyn()),
            ("function_b".into(), self.function_b.view_mut().into_dyn()),
        ]);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, &b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Shapes expected for `cfg`, in registry order.
    pub fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let probe = ModelParams::init(&ModelConfig { init_seed: 0, ..cfg.clone() });
        probe.tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect()
    }
}
