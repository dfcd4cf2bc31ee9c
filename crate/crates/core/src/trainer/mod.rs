//! Training loop: seeded batching with right-padding, Adam under a warm-up +
//! cosine schedule, periodic validation, early stopping and best-model
//! retention.

mod optim;

pub use optim::{grad_norm, lr_at, lr_at_time, Adam};

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::{decode_output, output_grid, DecodeConfig, DecodeError};
use crate::featio::FeatureTensor;
use crate::losses::{total_loss_with_grad, LossBreakdown, LossError, LossWeights};
use crate::metrics::{evaluate_track, EvalConfig};
use crate::network::{ModelParams, Network, NetworkError};
use crate::schema::{Annotation, MaskPolicy, SourceId};
use crate::targets::{make_targets, FrameGrid, FrameTargets, TargetConfig, TargetError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("non-finite loss or gradient at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("track {track}: {source}")]
    Targets { track: usize, source: TargetError },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// How validations are ranked when choosing the retained parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// `hr_point5_f + acc`
    #[default]
    Sum,
    HrPoint5F,
    Acc,
}

impl Selection {
    pub fn score(self, hr_point5_f: f64, acc: f64) -> f64 {
        match self {
            Selection::Sum => hr_point5_f + acc,
            Selection::HrPoint5F => hr_point5_f,
            Selection::Acc => acc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    /// Validate every this many steps.
    pub eval_every: usize,
    /// Validations without improvement in either metric before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Longer tracks are cut to this many seconds.
    pub max_duration: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub selection: Selection,
    pub loss: LossWeights,
    pub targets: TargetConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            peak_lr: 1e-4,
            warmup_steps: 300,
            total_steps: 2000,
            eval_every: 100,
            patience: 3,
            seed: 0,
            max_duration: 420.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 0.0,
            selection: Selection::Sum,
            loss: LossWeights::default(),
            targets: TargetConfig::default(),
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::BadConfig(m));
        if self.warmup_steps >= self.total_steps {
            return bad(format!("warmup_steps {} must be below total_steps {}", self.warmup_steps, self.total_steps));
        }
        if self.patience == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return bad("patience, batch_size and eval_every must be >= 1".into());
        }
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) {
            return bad(format!("peak_lr {}", self.peak_lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and epsilon must be positive".into());
        }
        if !(self.max_duration > 0.0) || self.grad_clip < 0.0 {
            return bad("max_duration must be positive and grad_clip non-negative".into());
        }
        self.loss.validate()?;
        self.decode.validate()?;
        Ok(())
    }
}

/// One annotated track with its source and loss-mask policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub features: FeatureTensor,
    pub annotation: Annotation,
    pub source: SourceId,
    pub policy: MaskPolicy,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: usize,
        lr: f64,
        bce: f64,
        tv: f64,
        ce: f64,
        focal: f64,
        total: f64,
    },
    Eval {
        step: usize,
        hr_point5_f: f64,
        hr3_f: f64,
        acc: f64,
        improved: bool,
        best: bool,
    },
    Stop {
        step: usize,
        reason: StopReason,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub step: usize,
    pub hr_point5_f: f64,
    pub hr3_f: f64,
    pub acc: f64,
}

pub struct TrainOutcome {
    /// Parameters of the best validation (the final ones when nothing was validated).
    pub best: Network,
    pub best_score: Option<ValidationScore>,
    pub last: Network,
    pub steps_run: usize,
    pub stop_reason: StopReason,
    pub log: Vec<LogRecord>,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> String {
        self.log.iter().map(|r| serde_json::to_string(r).expect("plain record") + "\n").collect()
    }
}

struct Prepared {
    x: Array2<f64>,
    targets: FrameTargets,
    source: SourceId,
}

fn prepare(examples: &[TrainExample], model: &Network, cfg: &TrainConfig) -> Result<Vec<Prepared>> {
    let f = model.config.downsample_factor;
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let max_frames = (cfg.max_duration * ex.features.frame_rate()).floor() as usize;
            let features = ex.features.truncated(max_frames);
            let ann = ex.annotation.truncated(cfg.max_duration);
            let frames_out = features.frames() / f;
            if frames_out == 0 {
                return Err(NetworkError::InputTooShort { frames: features.frames(), factor: f }.into());
            }
            let grid = FrameGrid { frame_rate: features.frame_rate() / f as f64, num_frames: frames_out, duration: ann.end() };
            let targets = make_targets(&ann, &grid, ex.policy, &cfg.targets).map_err(|source| TrainError::Targets { track: i, source })?;
            Ok(Prepared { x: features.to_f64(), targets, source: ex.source })
        })
        .collect()
}

/// Loss and gradients of one track inside a batch padded to `padded_frames`
/// input frames.
fn track_step(
    model: &Network,
    item: &Prepared,
    padded_frames: usize,
    dropout_seed: u64,
    weights: &LossWeights,
) -> Result<(LossBreakdown, ModelParams)> {
    let f = model.config.downsample_factor;
    let mut x = Array2::zeros((padded_frames, item.x.ncols()));
    x.slice_mut(s![..item.x.nrows(), ..]).assign(&item.x);
    let valid = item.x.nrows() / f;
    let targets = item.targets.padded(padded_frames / f);
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let rng = (model.config.dropout > 0.0).then_some(&mut rng);
    let (out, cache) = model.forward_train(x.view(), item.source, Some(valid), rng)?;
    let (loss, grad) = total_loss_with_grad(&out, &targets, weights)?;
    Ok((loss, model.backward(&cache, &grad)))
}

/// Result of one batch: per-track losses, their mean, and the mean gradient.
pub struct BatchResult {
    pub losses: Vec<LossBreakdown>,
    pub mean: LossBreakdown,
    pub grads: ModelParams,
}

fn batch_step_prepared(model: &Network, batch: &[&Prepared], cfg: &TrainConfig, dropout_seeds: &[u64]) -> Result<BatchResult> {
    let f = model.config.downsample_factor;
    let longest = batch.iter().map(|p| p.x.nrows()).max().unwrap_or(0);
    let padded = longest.div_ceil(f) * f;
    let results: Vec<Result<(LossBreakdown, ModelParams)>> = batch
        .par_iter()
        .zip(dropout_seeds.par_iter())
        .map(|(item, &seed)| track_step(model, item, padded, seed, &cfg.loss))
        .collect();
    let mut losses = Vec::with_capacity(batch.len());
    let mut grads = model.params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    for r in results {
        let (loss, g) = r?;
        losses.push(loss);
        grads.add_scaled(&g, scale);
    }
    let mean = LossBreakdown::mean(&losses);
    Ok(BatchResult { losses, mean, grads })
}

/// Runs one padded batch without updating the model. The batch is padded
/// to its longest track; every track is masked to its own length.
pub fn batch_step(model: &Network, batch: &[TrainExample], cfg: &TrainConfig, dropout_seeds: &[u64]) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if dropout_seeds.len() != batch.len() {
        return Err(TrainError::BadConfig("one dropout seed per track is required".into()));
    }
    let prepared = prepare(batch, model, cfg)?;
    let refs: Vec<&Prepared> = prepared.iter().collect();
    batch_step_prepared(model, &refs, cfg, dropout_seeds)
}

/// Decodes every validation track and returns mean (HR.5F, HR3F, ACC).
pub fn validate(model: &Network, examples: &[TrainExample], cfg: &TrainConfig) -> Result<(f64, f64, f64)> {
    let scores: Vec<Result<(f64, f64, f64)>> = examples
        .par_iter()
        .map(|ex| {
            let max_frames = (cfg.max_duration * ex.features.frame_rate()).floor() as usize;
            let features = ex.features.truncated(max_frames);
            let reference = ex.annotation.truncated(cfg.max_duration);
            let out = model.forward(features.to_f64().view(), SourceId::HX)?;
            let grid = output_grid(&features, out.frames_out, model.config.downsample_factor);
            let est = decode_output(&out, &grid, &cfg.decode)?;
            let m = evaluate_track("", &reference, &est, &cfg.eval);
            Ok((m.hr_point5_f, m.hr3_f, m.acc))
        })
        .collect();
    let n = examples.len().max(1) as f64;
    let mut sum = (0.0, 0.0, 0.0);
    for s in scores {
        let (a, b, c) = s?;
        sum = (sum.0 + a, sum.1 + b, sum.2 + c);
    }
    Ok((sum.0 / n, sum.1 / n, sum.2 / n))
}

/// Trains `model` on `corpus`, validating on `validation` every
/// `cfg.eval_every` steps (and once more after the last step).
///
/// Patience counts validations where neither HR.5F nor ACC beat its best
/// so far. The retained parameters maximize `cfg.selection`. Two runs with
/// equal inputs produce identical results regardless of thread count.
pub fn train(corpus: &[TrainExample], validation: &[TrainExample], cfg: &TrainConfig, model: Network) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    cfg.validate()?;
    let prepared = prepare(corpus, &model, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;

    let mut model = model;
    let mut opt = Adam::new(&model.params, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut log = Vec::new();
    let mut best: Option<(ValidationScore, ModelParams)> = None;
    let (mut best_hr, mut best_acc) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut stale = 0;
    let mut stop_reason = StopReason::Completed;
    let mut steps_run = 0;

    for step in 1..=cfg.total_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        let mut seeds = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size.min(prepared.len()) {
            if cursor == order.len() {
                order = (0..prepared.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&prepared[order[cursor]]);
            seeds.push(rng.random::<u64>());
            cursor += 1;
        }

        let BatchResult { mean, mut grads, .. } = batch_step_prepared(&model, &batch, cfg, &seeds)?;
        if !mean.total.is_finite() || !grads.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        if cfg.grad_clip > 0.0 {
            let norm = grad_norm(&grads);
            if norm > cfg.grad_clip {
                for (_, mut t) in grads.tensors_mut() {
                    t.mapv_inplace(|v| v * cfg.grad_clip / norm);
                }
            }
        }
        let lr = lr_at(step, cfg);
        opt.step(&mut model.params, &grads, lr);
        steps_run = step;
        log.push(LogRecord::Step { step, lr, bce: mean.bce, tv: mean.tv, ce: mean.ce, focal: mean.focal, total: mean.total });
        log::debug!("step {step} lr {lr:.3e} loss {:.5}", mean.total);

        let last = step == cfg.total_steps;
        if validation.is_empty() || (step % cfg.eval_every != 0 && !last) {
            continue;
        }
        let (hr, hr3, acc) = validate(&model, validation, cfg)?;
        let improved = hr > best_hr || acc > best_acc;
        best_hr = best_hr.max(hr);
        best_acc = best_acc.max(acc);
        stale = if improved { 0 } else { stale + 1 };
        let score = ValidationScore { step, hr_point5_f: hr, hr3_f: hr3, acc };
        let is_best = best
            .as_ref()
            .is_none_or(|(b, _)| cfg.selection.score(hr, acc) > cfg.selection.score(b.hr_point5_f, b.acc));
        if is_best {
            best = Some((score, model.params.clone()));
        }
        log.push(LogRecord::Eval { step, hr_point5_f: hr, hr3_f: hr3, acc, improved, best: is_best });
        log::info!("step {step}: HR.5F {hr:.4} HR3F {hr3:.4} ACC {acc:.4}");
        if stale >= cfg.patience {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
    }
    log.push(LogRecord::Stop { step: steps_run, reason: stop_reason });

    let (best_score, best_params) = match best {
        Some((s, p)) => (Some(s), p),
        None => (None, model.params.clone()),
    };
    let best_net = Network { config: model.config.clone(), params: best_params };
    Ok(TrainOutcome { best: best_net, best_score, last: model, steps_run, stop_reason, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featio::{synth_song, SynthSpec};
    use crate::network::ModelConfig;

    fn tiny_corpus(n: usize, seed0: u64) -> Vec<TrainExample> {
        let spec = SynthSpec { min_duration: 20.0, max_duration: 30.0, min_segments: 2, max_segments: 4, min_segment_seconds: 4.0, dims: 8, ..Default::default() };
        (0..n)
            .map(|i| {
                let (features, annotation) = synth_song(seed0 + i as u64, &spec);
                TrainExample { features, annotation, source: SourceId::HX, policy: MaskPolicy::Full }
            })
            .collect()
    }

    fn tiny_model() -> Network {
        Network::new(ModelConfig { input_dim: 8, d_model: 8, n_layers: 1, n_heads: 2, ..Default::default() }).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { warmup_steps: 10, total_steps: 10, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn padded_loss_equals_solo_loss() {
        let corpus = tiny_corpus(3, 40);
        let model = tiny_model();
        let cfg = TrainConfig::default();
        let batch = batch_step(&model, &corpus, &cfg, &[0, 0, 0]).unwrap();
        for (i, ex) in corpus.iter().enumerate() {
            let solo = batch_step(&model, std::slice::from_ref(ex), &cfg, &[0]).unwrap();
            let (a, b) = (batch.losses[i], solo.losses[0]);
            for (x, y) in [(a.bce, b.bce), (a.tv, b.tv), (a.ce, b.ce), (a.focal, b.focal), (a.total, b.total)] {
                assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0), "track {i}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn runs_are_reproducible_and_stop_early() {
        let corpus = tiny_corpus(4, 0);
        let val = tiny_corpus(2, 100);
        let cfg = TrainConfig {
            batch_size: 2,
            peak_lr: 0.0,
            warmup_steps: 1,
            total_steps: 40,
            eval_every: 2,
            patience: 2,
            ..Default::default()
        };
        let a = train(&corpus, &val, &cfg, tiny_model()).unwrap();
        let b = train(&corpus, &val, &cfg, tiny_model()).unwrap();
        assert_eq!(a.log, b.log);
        // a frozen model cannot improve after the first validation
        assert_eq!(a.stop_reason, StopReason::EarlyStopped);
        assert_eq!(a.steps_run, 6);
        assert_eq!(a.best.params, tiny_model().params);
        assert!(matches!(a.log.last(), Some(LogRecord::Stop { step: 6, reason: StopReason::EarlyStopped })));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(train(&[], &[], &TrainConfig::default(), tiny_model()), Err(TrainError::EmptyCorpus)));
    }

    #[test]
    fn loss_decreases_on_tiny_corpus() {
        let corpus = tiny_corpus(4, 7);
        let cfg = TrainConfig { batch_size: 4, peak_lr: 3e-3, warmup_steps: 2, total_steps: 40, ..Default::default() };
        let out = train(&corpus, &[], &cfg, tiny_model()).unwrap();
        let totals: Vec<f64> = out
            .log
            .iter()
            .filter_map(|r| match r {
                LogRecord::Step { total, .. } => Some(*total),
                _ => None,
            })
            .collect();
        assert_eq!(totals.len(), 40);
        assert!(totals[39] < 0.8 * totals[0], "{} -> {}", totals[0], totals[39]);
    }
}
