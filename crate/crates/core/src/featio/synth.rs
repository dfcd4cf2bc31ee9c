//! Seeded synthetic songs: piecewise-constant class means plus white noise,
//! with a short additive transient at every section change. The returned
//! annotation is the generative ground truth.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FeatureTensor, WindowKind, FEATURE_FRAME_RATE};
use crate::schema::{Annotation, Label, Segment, SourceId, NUM_CLASSES};
use crate::targets::FrameGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub min_duration: f64,
    pub max_duration: f64,
    pub min_segments: usize,
    pub max_segments: usize,
    /// Shortest generated segment, seconds.
    pub min_segment_seconds: f64,
    pub dims: usize,
    pub frame_rate: f64,
    /// Seed for the per-class mean vectors and the transient direction;
    /// shared by every song of a corpus.
    pub mean_seed: u64,
    pub mean_scale: f64,
    pub noise_sigma: f64,
    pub transient_amp: f64,
    /// Total extent of a boundary transient, seconds.
    pub transient_width: f64,
    /// Labels the generator may use. Adjacent segments never share an
    /// evaluation label.
    pub labels: Vec<Label>,
    pub source: SourceId,
    /// When > 0, the annotation is marked partial with this many valid ranges.
    pub partial_ranges: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            min_duration: 60.0,
            max_duration: 120.0,
            min_segments: 4,
            max_segments: 9,
            min_segment_seconds: 6.0,
            dims: 64,
            frame_rate: FEATURE_FRAME_RATE,
            mean_seed: 1,
            mean_scale: 0.5,
            noise_sigma: 1.0,
            transient_amp: 2.0,
            transient_width: 0.5,
            labels: Label::ALL.to_vec(),
            source: SourceId::HX,
            partial_ranges: 0,
        }
    }
}

fn round_ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// Per-class mean vectors (`NUM_CLASSES x dims`) for a spec.
pub fn class_means(spec: &SynthSpec) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.mean_seed);
    Array2::from_shape_simple_fn((NUM_CLASSES, spec.dims), || spec.mean_scale * rng.sample::<f64, _>(StandardNormal))
}

fn transient_direction(spec: &SynthSpec) -> Vec<f64> {
    // separate stream from the class means
    let mut rng = ChaCha8Rng::seed_from_u64(spec.mean_seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..spec.dims).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

fn draw_annotation(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Annotation {
    let lo = spec.min_duration.min(spec.max_duration);
    let hi = spec.min_duration.max(spec.max_duration);
    let duration = round_ms(if hi > lo { rng.random_range(lo..=hi) } else { lo });

    let min_len = spec.min_segment_seconds.max(0.01);
    let max_fit = ((duration / min_len).floor() as usize).max(1);
    let (smin, smax) = (spec.min_segments.max(1), spec.max_segments.max(spec.min_segments.max(1)));
    let count = rng.random_range(smin..=smax).min(max_fit);

    let slack = duration - count as f64 * min_len;
    let weights: Vec<f64> = (0..count).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = weights.iter().sum();
    let mut starts = Vec::with_capacity(count);
    let mut acc = 0.0;
    for w in &weights {
        starts.push(round_ms(acc));
        acc += min_len + slack * w / total;
    }

    let pool = if spec.labels.is_empty() { Label::ALL.to_vec() } else { spec.labels.clone() };
    let mut labels: Vec<Label> = Vec::with_capacity(count);
    for _ in 0..count {
        let choices: Vec<Label> = match labels.last() {
            Some(prev) => pool.iter().copied().filter(|l| l.eval_label() != prev.eval_label()).collect(),
            None => pool.clone(),
        };
        let choices = if choices.is_empty() { pool.clone() } else { choices };
        labels.push(choices[rng.random_range(0..choices.len())]);
    }

    let segments = starts.iter().zip(&labels).map(|(&s, &l)| Segment::new(s, l)).collect();
    let ann = Annotation::new(segments, duration, spec.source).expect("generator emits valid annotations");
    if spec.partial_ranges == 0 {
        return ann;
    }
    let slot = duration / spec.partial_ranges as f64;
    let ranges = (0..spec.partial_ranges)
        .map(|i| {
            let len = slot * rng.random_range(0.3..0.7);
            let a = i as f64 * slot + rng.random_range(0.0..(slot - len));
            (round_ms(a), round_ms(a + len))
        })
        .collect();
    ann.with_valid_ranges(ranges).expect("ranges lie in disjoint slots")
}

/// Generates one song. Deterministic in `(seed, spec)`.
pub fn synth_song(seed: u64, spec: &SynthSpec) -> (FeatureTensor, Annotation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ann = draw_annotation(&mut rng, spec);
    let means = class_means(spec);
    let direction = transient_direction(spec);

    let grid = FrameGrid {
        frame_rate: spec.frame_rate,
        num_frames: (ann.end() * spec.frame_rate - 1e-9).ceil() as usize,
        duration: ann.end(),
    };
    let classes = crate::targets::function_targets(&ann, &grid);
    let boundaries = ann.interior_boundaries();
    let half = spec.transient_width / 2.0;
    let sigma = spec.transient_width / 4.0;

    let mut data = Array2::<f32>::zeros((grid.num_frames, spec.dims));
    for (t, mut row) in data.rows_mut().into_iter().enumerate() {
        let time = grid.frame_time(t);
        let bump: f64 = boundaries
            .iter()
            .filter(|&&b| (time - b).abs() <= half)
            .map(|&b| spec.transient_amp * (-(time - b).powi(2) / (2.0 * sigma * sigma)).exp())
            .sum();
        for (d, v) in row.iter_mut().enumerate() {
            let noise = if spec.noise_sigma > 0.0 { spec.noise_sigma * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            *v = (means[[classes[t], d]] + bump * direction[d] + noise) as f32;
        }
    }
    let tensor = FeatureTensor::new(data, spec.frame_rate, "synth", WindowKind::Local30).expect("finite synthetic features");
    (tensor, ann)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SynthSpec::default();
        let (a, ann_a) = synth_song(11, &spec);
        let (b, ann_b) = synth_song(11, &spec);
        assert_eq!(ann_a, ann_b);
        assert!(a.data().iter().zip(b.data().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let (c, _) = synth_song(12, &spec);
        assert_ne!(a, c);
    }

    #[test]
    fn fixed_duration_and_segment_count() {
        let spec = SynthSpec { min_duration: 90.0, max_duration: 90.0, min_segments: 3, max_segments: 3, ..Default::default() };
        for seed in 0..5 {
            let (x, ann) = synth_song(seed, &spec);
            assert_eq!(ann.segments().len(), 3);
            assert_eq!(ann.end(), 90.0);
            assert_eq!(x.frames(), 2250);
            assert_eq!(x.dims(), 64);
        }
    }

    #[test]
    fn adjacent_eval_labels_differ() {
        let spec = SynthSpec::default();
        for seed in 0..20 {
            let (_, ann) = synth_song(seed, &spec);
            for w in ann.segments().windows(2) {
                assert_ne!(w[0].label.eval_label(), w[1].label.eval_label());
            }
            for w in ann.segments().windows(2) {
                assert!(w[1].start - w[0].start >= spec.min_segment_seconds - 1e-3);
            }
        }
    }

    #[test]
    fn zero_noise_is_constant_inside_segments() {
        let spec = SynthSpec { noise_sigma: 0.0, ..Default::default() };
        let (x, ann) = synth_song(3, &spec);
        let means = class_means(&spec);
        let bounds = ann.interior_boundaries();
        for t in 0..x.frames() {
            let time = t as f64 / spec.frame_rate;
            if bounds.iter().any(|b| (time - b).abs() <= spec.transient_width) {
                continue;
            }
            let c = ann.label_at(time).index();
            for d in 0..spec.dims {
                assert_eq!(x.data()[[t, d]], means[[c, d]] as f32);
            }
        }
    }

    #[test]
    fn class_means_recoverable_by_averaging() {
        let spec = SynthSpec { dims: 8, ..Default::default() };
        let means = class_means(&spec);
        let mut sums = Array2::<f64>::zeros((NUM_CLASSES, spec.dims));
        let mut counts = [0usize; NUM_CLASSES];
        for seed in 0..10 {
            let (x, ann) = synth_song(seed, &spec);
            let bounds = ann.interior_boundaries();
            for t in 0..x.frames() {
                let time = t as f64 / spec.frame_rate;
                if bounds.iter().any(|b| (time - b).abs() <= spec.transient_width) {
                    continue;
                }
                let c = ann.label_at(time).index();
                counts[c] += 1;
                for d in 0..spec.dims {
                    sums[[c, d]] += x.data()[[t, d]] as f64;
                }
            }
        }
        for c in 0..NUM_CLASSES {
            let n = counts[c];
            assert!(n > 100, "class {c} has only {n} frames");
            let tol = 3.0 * spec.noise_sigma / (n as f64).sqrt();
            for d in 0..spec.dims {
                let est = sums[[c, d]] / n as f64;
                assert!((est - means[[c, d]]).abs() <= tol, "class {c} dim {d}: {est} vs {}", means[[c, d]]);
            }
        }
    }

    #[test]
    fn partial_ranges_are_valid() {
        let spec = SynthSpec { partial_ranges: 3, source: SourceId(2), ..Default::default() };
        let (_, ann) = synth_song(5, &spec);
        assert_eq!(ann.valid_ranges().unwrap().len(), 3);
        assert_eq!(ann.source(), SourceId(2));
    }
}
