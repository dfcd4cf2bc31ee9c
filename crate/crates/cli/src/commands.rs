use std::path::{Path, PathBuf};

use msa_core::decode::predict;
use msa_core::featio::{fuse, synth_song};
use msa_core::metrics::{evaluate_named, EvalConfig};
use msa_core::network::{read_checkpoint, write_checkpoint, Checkpoint};
use msa_core::schema::{parse_spans, resolve_gaps, MappingProfile};
use msa_core::targets::{make_targets, FrameGrid, TargetConfig};
use msa_core::trainer::{train, TrainConfig, TrainExample};
use msa_core::{DecodeConfig, FusionConfig, MaskPolicy, ModelConfig, Network, SourceId, SourceTable, SynthSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::files::*;
use crate::manifest::{now, RunManifest};

fn profile(name: &str) -> Result<MappingProfile> {
    MappingProfile::builtin(name).map_err(|e| CliError::Config(e.to_string()))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

// ------------------------------------------------------------------ synth

#[derive(Serialize)]
struct SynthRun<'a> {
    n: usize,
    seed: u64,
    spec: &'a SynthSpec,
}

/// Song `index` of a corpus generated with `seed` uses seed `seed + index`.
pub fn song_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

pub fn synth(n: usize, seed: u64, spec_path: Option<&Path>, duration: Option<f64>, out: &Path) -> Result<()> {
    let started = now();
    let mut spec: SynthSpec = load_config(spec_path)?;
    if let Some(d) = duration {
        spec.min_duration = d;
        spec.max_duration = d;
    }
    if !(spec.min_duration > 0.0 && spec.dims > 0 && spec.frame_rate > 0.0) {
        return Err(CliError::Config("synth spec needs positive duration, dims and frame rate".into()));
    }
    create_dir(out)?;
    let songs: Vec<_> = (0..n).into_par_iter().map(|i| synth_song(song_seed(seed, i), &spec)).collect();
    for (i, (x, ann)) in songs.iter().enumerate() {
        let name = format!("song_{i:05}");
        write_features(&out.join(format!("{name}.{FEATURE_EXT}")), x)?;
        write_annotation(&out.join(format!("{name}.{ANNOTATION_EXT}")), ann)?;
    }
    let inputs = spec_path.map(display).into_iter().collect();
    RunManifest::new("synth", SynthRun { n, seed, spec: &spec }, Some(seed), inputs, started).write(out)?;
    log::info!("wrote {n} songs to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------- targets

pub fn targets(features: &Path, annotation: &Path, policy: MaskPolicy, factor: usize, out: Option<&Path>) -> Result<()> {
    if factor == 0 {
        return Err(CliError::Config("factor must be >= 1".into()));
    }
    let x = read_features(features)?;
    let ann = read_annotation(annotation, &profile("default")?)?;
    let grid = FrameGrid { frame_rate: x.frame_rate() / factor as f64, num_frames: x.frames() / factor, duration: ann.end() };
    let t = make_targets(&ann, &grid, policy, &TargetConfig::default()).map_err(|e| CliError::format(annotation, e))?;
    let dump = serde_json::json!({
        "grid": t.grid,
        "boundary": t.boundary,
        "function": t.function,
        "boundary_mask": t.boundary_mask,
        "function_mask": t.function_mask,
    });
    let text = serde_json::to_string(&dump).expect("json") + "\n";
    match out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// ------------------------------------------------------------------ train

/// Contents of a training config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    /// Directory of `.sff` / `.sfa` pairs.
    pub train_dir: PathBuf,
    /// Optional held-out directory used for validation and early stopping.
    pub val_dir: Option<PathBuf>,
    /// Label mapping profile for reading annotations.
    pub profile: String,
    pub sources: SourceTable,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for TrainFile {
    fn default() -> Self {
        TrainFile {
            train_dir: PathBuf::from("train"),
            val_dir: None,
            profile: "default".into(),
            sources: SourceTable::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

pub const BEST_CHECKPOINT: &str = "model.sfck";
pub const LAST_CHECKPOINT: &str = "last.sfck";
pub const TRAIN_LOG: &str = "train_log.jsonl";

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn examples(dir: &Path, cfg: &TrainFile, prof: &MappingProfile) -> Result<Vec<TrainExample>> {
    load_pairs(dir, prof)?
        .into_iter()
        .map(|(name, features, annotation)| {
            if features.dims() != cfg.model.input_dim {
                return Err(CliError::Config(format!(
                    "{name}: features have {} dims, model.input_dim is {}",
                    features.dims(),
                    cfg.model.input_dim
                )));
            }
            let source = annotation.source();
            let policy = cfg
                .sources
                .policy(source)
                .ok_or_else(|| CliError::Config(format!("{name}: source {source} is not in the source table")))?;
            Ok(TrainExample { features, annotation, source, policy })
        })
        .collect()
}

pub fn train_cmd(config: &Path, out: &Path) -> Result<()> {
    let started = now();
    let mut cfg: TrainFile = load_config(Some(config))?;
    let base = config.parent().unwrap_or(Path::new("."));
    cfg.train_dir = resolve(base, &cfg.train_dir);
    cfg.val_dir = cfg.val_dir.as_deref().map(|v| resolve(base, v));
    if cfg.sources.len() != cfg.model.n_sources {
        return Err(CliError::Config(format!(
            "source table has {} entries, model.n_sources is {}",
            cfg.sources.len(),
            cfg.model.n_sources
        )));
    }
    cfg.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let model = Network::new(cfg.model.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let prof = profile(&cfg.profile)?;
    let train_set = examples(&cfg.train_dir, &cfg, &prof)?;
    let val_set = match &cfg.val_dir {
        Some(dir) => examples(dir, &cfg, &prof)?,
        None => Vec::new(),
    };
    log::info!("training on {} tracks, validating on {}", train_set.len(), val_set.len());

    let outcome = train(&train_set, &val_set, &cfg.train, model).map_err(|e| CliError::Training(e.to_string()))?;
    create_dir(out)?;
    let save = |name: &str, net: &Network| {
        let ckpt = Checkpoint { config: net.config.clone(), sources: cfg.sources.clone(), params: net.params.clone() };
        let path = out.join(name);
        write_checkpoint(&path, &ckpt).map_err(|e| CliError::format(&path, e))
    };
    save(BEST_CHECKPOINT, &outcome.best)?;
    save(LAST_CHECKPOINT, &outcome.last)?;
    write_text(&out.join(TRAIN_LOG), &outcome.log_jsonl())?;
    let mut inputs = vec![display(config), display(&cfg.train_dir)];
    inputs.extend(cfg.val_dir.as_deref().map(display));
    RunManifest::new("train", &cfg, Some(cfg.train.seed), inputs, started).write(out)?;
    match &outcome.best_score {
        Some(s) => println!(
            "best step {}: HR.5F {:.4} HR3F {:.4} ACC {:.4} ({} steps, {:?})",
            s.step, s.hr_point5_f, s.hr3_f, s.acc, outcome.steps_run, outcome.stop_reason
        ),
        None => println!("{} steps, no validation set", outcome.steps_run),
    }
    Ok(())
}

// ------------------------------------------------------------------ infer

pub fn infer_cmd(checkpoint: &Path, features: &[String], decode_path: Option<&Path>, out: &Path) -> Result<()> {
    let started = now();
    let decode: DecodeConfig = load_config(decode_path)?;
    decode.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let ckpt = read_checkpoint(checkpoint).map_err(|e| match e {
        msa_core::network::NetworkError::Io(err) => CliError::io(checkpoint, err),
        other => CliError::format(checkpoint, other),
    })?;
    let net = Network::from_parts(ckpt.config, ckpt.params).map_err(|e| CliError::format(checkpoint, e))?;
    let paths = expand_globs(features)?;
    create_dir(out)?;
    let results: Vec<Result<()>> = paths
        .par_iter()
        .map(|p| {
            let x = read_features(p)?;
            let (_, ann) = predict(&x, &net, &decode).map_err(|e| CliError::Inference(format!("{}: {e}", p.display())))?;
            write_annotation(&out.join(format!("{}.{ANNOTATION_EXT}", stem(p))), &ann)
        })
        .collect();
    results.into_iter().collect::<Result<Vec<()>>>()?;
    let mut inputs = vec![display(checkpoint)];
    inputs.extend(paths.iter().map(|p| display(p)));
    RunManifest::new("infer", &decode, None, inputs, started).write(out)?;
    log::info!("decoded {} tracks into {}", paths.len(), out.display());
    Ok(())
}

// ------------------------------------------------------------------- eval

pub const REPORT_FILE: &str = "report.jsonl";

pub fn eval_cmd(reference: &Path, estimate: &Path, profile_name: &str, config: Option<&Path>, out: &Path) -> Result<()> {
    let started = now();
    let cfg: EvalConfig = load_config(config)?;
    let prof = profile(profile_name)?;
    let refs = list_with_ext(reference, ANNOTATION_EXT)?;
    let items: Vec<Result<(String, msa_core::Annotation, msa_core::Annotation)>> = refs
        .par_iter()
        .map(|r| {
            let name = stem(r);
            let e = estimate.join(format!("{name}.{ANNOTATION_EXT}"));
            if !e.is_file() {
                return Err(CliError::MissingPair(name));
            }
            Ok((name, read_annotation(r, &prof)?, read_annotation(&e, &prof)?))
        })
        .collect();
    let items = items.into_iter().collect::<Result<Vec<_>>>()?;
    let report = evaluate_named(&items, &cfg).map_err(|e| CliError::format(reference, e))?;
    create_dir(out)?;
    write_text(&out.join(REPORT_FILE), &report.to_jsonl())?;
    RunManifest::new("eval", &cfg, None, vec![display(reference), display(estimate)], started).write(out)?;
    let m = &report.mean;
    println!("{} tracks: HR.5F {:.4} HR3F {:.4} ACC {:.4}", m.tracks, m.hr_point5_f, m.hr3_f, m.acc);
    Ok(())
}

// ---------------------------------------------------------------- convert

pub fn convert_spans(input: &Path, output: &Path, profile_name: &str, source: usize) -> Result<()> {
    let spans = parse_spans(&read_text(input)?, &profile(profile_name)?).map_err(|e| CliError::format(input, e))?;
    let ann = resolve_gaps(&spans, SourceId(source)).map_err(|e| CliError::format(input, e))?;
    write_annotation(output, &ann)
}

pub fn convert_relabel(input: &Path, output: &Path, profile_name: &str) -> Result<()> {
    let ann = read_annotation(input, &profile(profile_name)?)?;
    write_annotation(output, &ann)
}

pub fn convert_fuse(local: Option<&Path>, global: Option<&Path>, config: Option<&Path>, output: &Path) -> Result<()> {
    let cfg: FusionConfig = load_config(config)?;
    let local = local.map(read_features).transpose()?;
    let global = global.map(read_features).transpose()?;
    let fused = fuse(local.as_ref(), global.as_ref(), &cfg).map_err(|e| CliError::Config(e.to_string()))?;
    if fused.truncated_frames > 0 {
        log::warn!("dropped {} frames to align window lengths", fused.truncated_frames);
    }
    write_features(output, &fused.tensor)
}

pub fn convert_inspect(input: &Path) -> Result<()> {
    let x = read_features(input)?;
    let info = serde_json::json!({
        "frames": x.frames(),
        "dims": x.dims(),
        "frame_rate": x.frame_rate(),
        "duration": x.duration(),
        "extractor_id": x.extractor_id(),
        "window": format!("{:?}", x.window()),
    });
    println!("{info}");
    Ok(())
}
