//! Boundary hit-rate F-measures (0.5 s and 3 s windows) and frame accuracy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{merge_eval_labels, Annotation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("nothing to evaluate")]
    EmptyCorpus,
    #[error("bad metric report: {0}")]
    BadReport(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub matched: usize,
    pub n_ref: usize,
    pub n_est: usize,
}

impl BoundaryScore {
    fn from_counts(matched: usize, n_ref: usize, n_est: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let (precision, recall) = (ratio(matched, n_est), ratio(matched, n_ref));
        let f = match (n_ref, n_est) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            _ if precision + recall == 0.0 => 0.0,
            _ => 2.0 * precision * recall / (precision + recall),
        };
        BoundaryScore { precision, recall, f, matched, n_ref, n_est }
    }
}

/// Size of a maximum one-to-one matching between `a` and `b` where a pair
/// may match when the two times differ by at most `tol`.
pub fn max_matching(a: &[f64], b: &[f64], tol: f64) -> usize {
    let adj: Vec<Vec<usize>> = a.iter().map(|&x| (0..b.len()).filter(|&j| (x - b[j]).abs() <= tol).collect()).collect();
    let mut owner: Vec<Option<usize>> = vec![None; b.len()];

    fn augment(i: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, adj, owner, seen)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }

    let mut count = 0;
    for i in 0..a.len() {
        let mut seen = vec![false; b.len()];
        if augment(i, &adj, &mut owner, &mut seen) {
            count += 1;
        }
    }
    count
}

fn boundary_set(ann: &Annotation, include_endpoints: bool) -> Vec<f64> {
    if include_endpoints {
        let mut v: Vec<f64> = ann.starts().collect();
        v.push(ann.end());
        v
    } else {
        ann.interior_boundaries()
    }
}

/// Boundary precision, recall and F-measure at tolerance `tol` seconds,
/// over interior boundaries only.
pub fn boundary_f(reference: &Annotation, estimate: &Annotation, tol: f64) -> BoundaryScore {
    boundary_f_with(reference, estimate, tol, false)
}

/// As [`boundary_f`], optionally counting the start and end times too.
pub fn boundary_f_with(reference: &Annotation, estimate: &Annotation, tol: f64, include_endpoints: bool) -> BoundaryScore {
    let r = boundary_set(reference, include_endpoints);
    let e = boundary_set(estimate, include_endpoints);
    BoundaryScore::from_counts(max_matching(&e, &r, tol), r.len(), e.len())
}

/// Fraction of sample times `k * step < reference.end()` at which both
/// annotations carry the same label.
pub fn frame_acc(reference: &Annotation, estimate: &Annotation, step: f64) -> f64 {
    let mut total = 0usize;
    let mut hits = 0usize;
    loop {
        // round to the nearest microsecond so 0.1-spaced times land on the grid
        let t = (total as f64 * step * 1e6).round() / 1e6;
        if t >= reference.end() {
            break;
        }
        if reference.label_at(t) == estimate.label_at(t) {
            hits += 1;
        }
        total += 1;
    }
    if total == 0 {
        return 0.0;
    }
    hits as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub fine_tolerance: f64,
    pub coarse_tolerance: f64,
    pub acc_step: f64,
    pub include_endpoints: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { fine_tolerance: 0.5, coarse_tolerance: 3.0, acc_step: 0.1, include_endpoints: false }
    }
}

/// One evaluated track. Serialized as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMetrics {
    pub track: String,
    pub hr_point5_p: f64,
    pub hr_point5_r: f64,
    pub hr_point5_f: f64,
    pub hr3_p: f64,
    pub hr3_r: f64,
    pub hr3_f: f64,
    pub acc: f64,
    pub matched_point5: usize,
    pub matched3: usize,
    pub n_ref: usize,
    pub n_est: usize,
}

/// Unweighted means over tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub tracks: usize,
    pub hr_point5_p: f64,
    pub hr_point5_r: f64,
    pub hr_point5_f: f64,
    pub hr3_p: f64,
    pub hr3_r: f64,
    pub hr3_f: f64,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tracks: Vec<TrackMetrics>,
    pub mean: MeanMetrics,
}

/// Scores one pair after folding both into the evaluation vocabulary.
pub fn evaluate_track(track: &str, reference: &Annotation, estimate: &Annotation, cfg: &EvalConfig) -> TrackMetrics {
    let r = merge_eval_labels(reference);
    let e = merge_eval_labels(estimate);
    let fine = boundary_f_with(&r, &e, cfg.fine_tolerance, cfg.include_endpoints);
    let coarse = boundary_f_with(&r, &e, cfg.coarse_tolerance, cfg.include_endpoints);
    TrackMetrics {
        track: track.to_string(),
        hr_point5_p: fine.precision,
        hr_point5_r: fine.recall,
        hr_point5_f: fine.f,
        hr3_p: coarse.precision,
        hr3_r: coarse.recall,
        hr3_f: coarse.f,
        acc: frame_acc(&r, &e, cfg.acc_step),
        matched_point5: fine.matched,
        matched3: coarse.matched,
        n_ref: fine.n_ref,
        n_est: fine.n_est,
    }
}

fn mean_of(tracks: &[TrackMetrics]) -> MeanMetrics {
    let n = tracks.len() as f64;
    let avg = |f: fn(&TrackMetrics) -> f64| tracks.iter().map(f).sum::<f64>() / n;
    MeanMetrics {
        tracks: tracks.len(),
        hr_point5_p: avg(|t| t.hr_point5_p),
        hr_point5_r: avg(|t| t.hr_point5_r),
        hr_point5_f: avg(|t| t.hr_point5_f),
        hr3_p: avg(|t| t.hr3_p),
        hr3_r: avg(|t| t.hr3_r),
        hr3_f: avg(|t| t.hr3_f),
        acc: avg(|t| t.acc),
    }
}

/// Evaluates named `(track, reference, estimate)` triples.
pub fn evaluate_named(items: &[(String, Annotation, Annotation)], cfg: &EvalConfig) -> Result<MetricReport, MetricError> {
    if items.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let tracks: Vec<TrackMetrics> = items.iter().map(|(name, r, e)| evaluate_track(name, r, e, cfg)).collect();
    let mean = mean_of(&tracks);
    Ok(MetricReport { tracks, mean })
}

/// Evaluates `(reference, estimate)` pairs with default settings; tracks are
/// named by their position.
pub fn evaluate_corpus(pairs: &[(Annotation, Annotation)]) -> Result<MetricReport, MetricError> {
    let items: Vec<(String, Annotation, Annotation)> =
        pairs.iter().enumerate().map(|(i, (r, e))| (i.to_string(), r.clone(), e.clone())).collect();
    evaluate_named(&items, &EvalConfig::default())
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: MeanMetrics,
}

impl MetricReport {
    /// One JSON object per track, then a final `{"summary": {...}}` line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.tracks {
            out.push_str(&serde_json::to_string(t).expect("plain struct serializes"));
            out.push('\n');
        }
        let summary = SummaryLine { summary: self.mean.clone() };
        out.push_str(&serde_json::to_string(&summary).expect("plain struct serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<MetricReport, MetricError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let (last, rest) = lines.split_last().ok_or(MetricError::EmptyCorpus)?;
        let tracks = rest
            .iter()
            .map(|l| serde_json::from_str(l).map_err(|e| MetricError::BadReport(e.to_string())))
            .collect::<Result<Vec<TrackMetrics>, _>>()?;
        let summary: SummaryLine = serde_json::from_str(last).map_err(|e| MetricError::BadReport(e.to_string()))?;
        Ok(MetricReport { tracks, mean: summary.summary })
    }
}
