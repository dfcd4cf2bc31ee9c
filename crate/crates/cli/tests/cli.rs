use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn msa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msa")).args(args).env("MSA_WORKERS", "1").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = msa(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, seed: u64, extra: &[&str]) {
    let (n, seed) = (n.to_string(), seed.to_string());
    let mut args = vec!["synth", "--n", &n, "--seed", &seed, "--out", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_deterministic_apart_from_timestamps() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 3, 5, &["--duration", "40"]);
    synth(&b, 3, 5, &["--duration", "40"]);
    assert_eq!(files_with_ext(&a, "sff").len(), 3);
    for ext in ["sff", "sfa"] {
        for (pa, pb) in files_with_ext(&a, ext).iter().zip(files_with_ext(&b, ext)) {
            assert_eq!(fs::read(pa).unwrap(), fs::read(&pb).unwrap(), "{}", pa.display());
        }
    }
    let ma: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let mb: Value = serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    for key in ["command", "config_hash", "config", "seed", "code_version"] {
        assert_eq!(ma[key], mb[key], "{key}");
    }
    assert_eq!(ma["seed"], 5);
}

#[test]
fn synth_with_zero_songs_writes_only_a_manifest() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), 0, 1, &[]);
    let names: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("manifest.json")]);
}

#[test]
fn fixed_duration_and_inspect() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), 1, 0, &["--duration", "90"]);
    let out = ok(&["convert", "inspect", s(&tmp.path().join("song_00000.sff"))]);
    let info: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((info["duration"].as_f64().unwrap() - 90.0).abs() < 0.05, "{info}");
    assert_eq!(info["dims"], 64);
    let ann = fs::read_to_string(tmp.path().join("song_00000.sfa")).unwrap();
    assert!(ann.lines().any(|l| l.trim_start().starts_with("90")), "{ann}");
}

#[test]
fn eval_of_references_against_themselves_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("eval");
    synth(&data, 4, 9, &["--duration", "60"]);
    let stdout = ok(&["eval", "--reference", s(&data), "--estimate", s(&data), "--out", s(&out)]).stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("4 tracks"));
    let report = fs::read_to_string(out.join("report.jsonl")).unwrap();
    let lines: Vec<Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    let summary = &lines[4]["summary"];
    for key in ["hr_point5_f", "hr3_f", "acc"] {
        assert_eq!(summary[key].as_f64().unwrap(), 1.0, "{key}");
    }
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn eval_with_a_missing_estimate_exits_6() {
    let tmp = TempDir::new().unwrap();
    let (r, e) = (tmp.path().join("r"), tmp.path().join("e"));
    synth(&r, 2, 0, &["--duration", "30"]);
    fs::create_dir(&e).unwrap();
    fs::copy(r.join("song_00000.sfa"), e.join("song_00000.sfa")).unwrap();
    let out = msa(&["eval", "--reference", s(&r), "--estimate", s(&e), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(6));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(msa(&["synth", "--n"]).status.code(), Some(2));
    assert_eq!(msa(&["frobnicate"]).status.code(), Some(2));

    let bad_cfg = tmp.path().join("bad.toml");
    fs::write(&bad_cfg, "min_duration = \"long\"\n").unwrap();
    let out = msa(&["synth", "--n", "1", "--config", s(&bad_cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(3));

    let missing = tmp.path().join("missing.sff");
    assert_eq!(msa(&["convert", "inspect", s(&missing)]).status.code(), Some(4));

    let garbage = tmp.path().join("garbage.sff");
    fs::write(&garbage, b"not a feature file").unwrap();
    assert_eq!(msa(&["convert", "inspect", s(&garbage)]).status.code(), Some(5));

    let ckpt = tmp.path().join("garbage.sfck");
    fs::write(&ckpt, b"nope").unwrap();
    let out = msa(&["infer", "--checkpoint", s(&ckpt), "--features", s(&garbage), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn convert_spans_closes_gaps() {
    let tmp = TempDir::new().unwrap();
    let spans = tmp.path().join("in.txt");
    fs::write(&spans, "0.0 10.0 intro\n12.0 30.0 verse\n30.0 45.5 chorus\n").unwrap();
    let out = tmp.path().join("out.sfa");
    ok(&["convert", "spans", s(&spans), s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    let relabeled = tmp.path().join("re.sfa");
    ok(&["convert", "relabel", s(&out), s(&relabeled)]);
    assert_eq!(fs::read_to_string(&relabeled).unwrap(), text);
    assert!(text.contains("45.5"), "{text}");
}

#[test]
fn targets_dump_matches_the_output_grid() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), 1, 3, &["--duration", "30"]);
    let out = ok(&[
        "targets",
        "--features",
        s(&tmp.path().join("song_00000.sff")),
        "--annotation",
        s(&tmp.path().join("song_00000.sfa")),
        "--policy",
        "gem",
    ]);
    let t: Value = serde_json::from_slice(&out.stdout).unwrap();
    let n = t["grid"]["num_frames"].as_u64().unwrap() as usize;
    assert_eq!(t["boundary"].as_array().unwrap().len(), n);
    assert_eq!(t["function"].as_array().unwrap().len(), n);
    assert!(t["boundary_mask"].as_array().unwrap().iter().all(|m| m == false));
    assert!(t["function_mask"].as_array().unwrap().iter().all(|m| m == true));
}

#[test]
fn train_then_infer_then_eval() {
    let tmp = TempDir::new().unwrap();
    let (train_dir, val_dir) = (tmp.path().join("train"), tmp.path().join("val"));
    let spec = tmp.path().join("spec.toml");
    fs::write(&spec, "dims = 8\nmin_duration = 24.0\nmax_duration = 30.0\n").unwrap();
    synth(&train_dir, 3, 0, &["--config", s(&spec)]);
    synth(&val_dir, 2, 100, &["--config", s(&spec)]);
    let cfg = tmp.path().join("train.toml");
    fs::write(
        &cfg,
        r#"
train_dir = "train"
val_dir = "val"

[model]
input_dim = 8
d_model = 16
n_layers = 1
n_heads = 2

[train]
batch_size = 2
peak_lr = 1e-3
warmup_steps = 1
total_steps = 4
eval_every = 2
"#,
    )
    .unwrap();
    let run = tmp.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&run)]);
    for f in ["model.sfck", "last.sfck", "train_log.jsonl", "manifest.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    let kinds: Vec<String> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds.iter().filter(|k| *k == "step").count(), 4);
    assert_eq!(kinds.iter().filter(|k| *k == "eval").count(), 2);
    assert_eq!(kinds.last().unwrap(), "stop");

    let pred = tmp.path().join("pred");
    let pattern = format!("{}/*.sff", val_dir.display());
    ok(&["infer", "--checkpoint", s(&run.join("model.sfck")), "--features", &pattern, "--out", s(&pred)]);
    assert_eq!(files_with_ext(&pred, "sfa").len(), 2);
    let eval = tmp.path().join("eval");
    ok(&["eval", "--reference", s(&val_dir), "--estimate", s(&pred), "--out", s(&eval)]);
    let report = fs::read_to_string(eval.join("report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 3);

    let wrong = tmp.path().join("wrong.toml");
    fs::write(&wrong, "train_dir = \"train\"\n[model]\ninput_dim = 9\n").unwrap();
    assert_eq!(msa(&["train", "--config", s(&wrong), "--out", s(&run)]).status.code(), Some(3));
}
