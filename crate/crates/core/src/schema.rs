//! Label vocabulary, annotation data model and the `.sfa` annotation format.
//!
//! An annotation is an ordered list of `(start, label)` segments closed by an
//! end time:
//!
//! ```text
//! # source=0
//! 0.000 intro
//! 12.500 verse
//! 40.000 end
//! ```
//!
//! Raw labels from other tools are normalized through a [`MappingProfile`].

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of training classes.
pub const NUM_CLASSES: usize = 8;

/// Number of evaluation classes (pre-chorus folded into verse).
pub const NUM_EVAL_CLASSES: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: segment times are not strictly increasing")]
    NonMonotonicTimes { line: usize },
    #[error("missing terminal `<seconds> end` record")]
    MissingEnd,
    #[error("annotation has no segments")]
    NoSegments,
    #[error("label `{0}` is not covered by the mapping profile")]
    UnmappedLabel(String),
    #[error("invalid annotation: {0}")]
    Invalid(String),
    #[error("invalid mapping profile: {0}")]
    BadProfile(String),
    #[error("unknown mapping profile `{0}`")]
    UnknownProfile(String),
}

pub type Result<T> = std::result::Result<T, SchemaError>;

/// Canonical section label. The discriminant is the class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Intro = 0,
    Verse = 1,
    PreChorus = 2,
    Chorus = 3,
    Bridge = 4,
    Inst = 5,
    Outro = 6,
    Silence = 7,
}

impl Label {
    pub const ALL: [Label; NUM_CLASSES] = [
        Label::Intro,
        Label::Verse,
        Label::PreChorus,
        Label::Chorus,
        Label::Bridge,
        Label::Inst,
        Label::Outro,
        Label::Silence,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Intro => "intro",
            Label::Verse => "verse",
            Label::PreChorus => "pre-chorus",
            Label::Chorus => "chorus",
            Label::Bridge => "bridge",
            Label::Inst => "inst",
            Label::Outro => "outro",
            Label::Silence => "silence",
        }
    }

    /// The label used for evaluation: pre-chorus counts as verse.
    pub fn eval_label(self) -> Label {
        match self {
            Label::PreChorus => Label::Verse,
            other => other,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = SchemaError;

    /// Parses a canonical name only; use [`map_label`] for raw vocabularies.
    fn from_str(s: &str) -> Result<Label> {
        Label::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| SchemaError::UnmappedLabel(s.to_string()))
    }
}

/// Index into the registered dataset-source table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceId(pub usize);

impl SourceId {
    /// HarmonixSet; the source every inference run is conditioned on.
    pub const HX: SourceId = SourceId(0);
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which losses a source's annotations are allowed to supervise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskPolicy {
    /// Fully annotated: both losses everywhere.
    #[default]
    Full,
    /// Partially annotated: both losses only near the annotated ranges.
    Hook,
    /// Coarse boundaries: function loss only.
    Gem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub name: String,
    #[serde(default)]
    pub policy: MaskPolicy,
}

/// Ordered table of dataset sources. The order fixes each source's embedding
/// row and is stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTable {
    pub entries: Vec<SourceEntry>,
}

impl Default for SourceTable {
    fn default() -> Self {
        let entry = |name: &str, policy| SourceEntry { name: name.to_string(), policy };
        SourceTable {
            entries: vec![
                entry("HX", MaskPolicy::Full),
                entry("P", MaskPolicy::Full),
                entry("H", MaskPolicy::Hook),
                entry("G", MaskPolicy::Gem),
            ],
        }
    }
}

impl SourceTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: SourceId) -> Option<&SourceEntry> {
        self.entries.get(id.0)
    }

    pub fn lookup(&self, name: &str) -> Option<SourceId> {
        self.entries.iter().position(|e| e.name == name).map(SourceId)
    }

    pub fn policy(&self, id: SourceId) -> Option<MaskPolicy> {
        self.get(id).map(|e| e.policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub label: Label,
}

impl Segment {
    pub fn new(start: f64, label: Label) -> Self {
        Segment { start, label }
    }
}

/// A gapless structural annotation: each segment runs until the next one
/// starts, the last one until `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    segments: Vec<Segment>,
    end: f64,
    source: SourceId,
    valid_ranges: Option<Vec<(f64, f64)>>,
}

impl Annotation {
    pub fn new(segments: Vec<Segment>, end: f64, source: SourceId) -> Result<Self> {
        let ann = Annotation { segments, end, source, valid_ranges: None };
        ann.validate()?;
        Ok(ann)
    }

    /// Marks the annotation as covering only the given `(start, end)` ranges.
    pub fn with_valid_ranges(mut self, ranges: Vec<(f64, f64)>) -> Result<Self> {
        self.valid_ranges = Some(ranges);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let first = self.segments.first().ok_or(SchemaError::NoSegments)?;
        if !first.start.is_finite() || first.start < 0.0 {
            return Err(SchemaError::Invalid(format!("first start {} is negative or non-finite", first.start)));
        }
        for pair in self.segments.windows(2) {
            if !pair[1].start.is_finite() || pair[1].start <= pair[0].start {
                return Err(SchemaError::Invalid(format!(
                    "segment starts {} and {} are not strictly increasing",
                    pair[0].start, pair[1].start
                )));
            }
        }
        let last = self.segments[self.segments.len() - 1].start;
        if !self.end.is_finite() || self.end <= last {
            return Err(SchemaError::Invalid(format!("end {} must exceed last start {}", self.end, last)));
        }
        if let Some(ranges) = &self.valid_ranges {
            let mut prev_end = 0.0;
            for &(a, b) in ranges {
                if !(a.is_finite() && b.is_finite()) || a < prev_end || b <= a || b > self.end {
                    return Err(SchemaError::Invalid(format!(
                        "valid range {a}-{b} is unsorted, overlapping, empty or outside [0, {}]",
                        self.end
                    )));
                }
                prev_end = b;
            }
        }
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn source(&self) -> SourceId {
        self.source
    }

    pub fn valid_ranges(&self) -> Option<&[(f64, f64)]> {
        self.valid_ranges.as_deref()
    }

    pub fn with_source(mut self, source: SourceId) -> Self {
        self.source = source;
        self
    }

    pub fn starts(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().map(|s| s.start)
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.segments.iter().map(|s| s.label)
    }

    /// Segment starts strictly inside `(0, end)`.
    pub fn interior_boundaries(&self) -> Vec<f64> {
        self.starts().filter(|&t| t > 0.0 && t < self.end).collect()
    }

    /// Label of the segment covering time `t`. Times before the first start
    /// take the first label, times at or after `end` take the last.
    pub fn label_at(&self, t: f64) -> Label {
        let idx = self.segments.partition_point(|s| s.start <= t);
        self.segments[idx.saturating_sub(1)].label
    }

    /// `(start, end, label)` extents of every segment.
    pub fn spans(&self) -> Vec<Span> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| Span {
                start: s.start,
                end: self.segments.get(i + 1).map_or(self.end, |n| n.start),
                label: s.label,
            })
            .collect()
    }

    /// Cuts the annotation at `max_end` seconds (no-op when already shorter).
    pub fn truncated(&self, max_end: f64) -> Annotation {
        if max_end >= self.end {
            return self.clone();
        }
        let mut segments: Vec<Segment> = self.segments.iter().copied().filter(|s| s.start < max_end).collect();
        if segments.is_empty() {
            segments.push(Segment::new(0.0, self.segments[0].label));
        }
        let valid_ranges = self.valid_ranges.as_ref().map(|ranges| {
            ranges
                .iter()
                .filter(|(a, _)| *a < max_end)
                .map(|&(a, b)| (a, b.min(max_end)))
                .collect()
        });
        Annotation { segments, end: max_end, source: self.source, valid_ranges }
    }
}

/// A segment with an explicit end, as produced by tools that may leave gaps
/// between consecutive segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: f64,
    pub end: f64,
    pub label: Label,
}

/// Closes gaps between spans by extending each span forward to the next
/// span's start. The last span's end becomes the annotation end.
pub fn resolve_gaps(spans: &[Span], source: SourceId) -> Result<Annotation> {
    let last = spans.last().ok_or(SchemaError::NoSegments)?;
    let segments = spans.iter().map(|s| Segment::new(s.start, s.label)).collect();
    Annotation::new(segments, last.end, source)
}

/// Folds pre-chorus into verse and merges adjacent segments that end up with
/// the same label (the earliest start is kept).
pub fn merge_eval_labels(ann: &Annotation) -> Annotation {
    let mut segments: Vec<Segment> = Vec::with_capacity(ann.segments.len());
    for seg in &ann.segments {
        let label = seg.label.eval_label();
        if segments.last().is_some_and(|prev| prev.label == label) {
            continue;
        }
        segments.push(Segment::new(seg.start, label));
    }
    Annotation { segments, ..ann.clone() }
}

/// A raw-label to canonical-label table.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingProfile {
    pub name: String,
    table: HashMap<String, Label>,
    fallback: Option<Label>,
}

#[derive(Deserialize)]
struct ProfileFile {
    name: String,
    #[serde(default)]
    fallback: Option<String>,
    #[serde(default)]
    map: HashMap<String, String>,
}

const BUILTIN_PROFILES: [(&str, &str); 3] = [
    ("identity", include_str!("../profiles/identity.toml")),
    ("default", include_str!("../profiles/default.toml")),
    ("all-in-one", include_str!("../profiles/all-in-one.toml")),
];

impl MappingProfile {
    /// Parses a profile from TOML: `name`, optional `fallback`, and a `[map]`
    /// table of raw → canonical names.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ProfileFile = toml::from_str(text).map_err(|e| SchemaError::BadProfile(e.to_string()))?;
        let table = file
            .map
            .into_iter()
            .map(|(raw, canon)| Ok((normalize_raw(&raw), canon.parse::<Label>()?)))
            .collect::<Result<HashMap<_, _>>>()
            .map_err(|e| SchemaError::BadProfile(e.to_string()))?;
        let fallback = file
            .fallback
            .map(|f| f.parse::<Label>())
            .transpose()
            .map_err(|e| SchemaError::BadProfile(e.to_string()))?;
        Ok(MappingProfile { name: file.name, table, fallback })
    }

    pub fn builtin(name: &str) -> Result<Self> {
        BUILTIN_PROFILES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| MappingProfile::from_toml(text))
            .unwrap_or_else(|| Err(SchemaError::UnknownProfile(name.to_string())))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN_PROFILES.iter().map(|(n, _)| *n)
    }

    pub fn identity() -> Self {
        MappingProfile::builtin("identity").expect("builtin profile parses")
    }

    pub fn with_fallback(mut self, fallback: Option<Label>) -> Self {
        self.fallback = fallback;
        self
    }
}

fn normalize_raw(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// Maps a raw label to the canonical vocabulary: profile table first, then
/// canonical names, then the profile fallback.
pub fn map_label(raw: &str, profile: &MappingProfile) -> Result<Label> {
    let key = normalize_raw(raw);
    if let Some(&label) = profile.table.get(&key) {
        return Ok(label);
    }
    key.parse::<Label>()
        .ok()
        .or(profile.fallback)
        .ok_or_else(|| SchemaError::UnmappedLabel(raw.to_string()))
}

fn parse_time(token: &str, line: usize) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(t) if t.is_finite() && t >= 0.0 => Ok(t),
        _ => Err(SchemaError::MalformedLine { line, reason: format!("bad time `{token}`") }),
    }
}

fn parse_ranges(value: &str, line: usize) -> Result<Vec<(f64, f64)>> {
    value
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (a, b) = pair.split_once('-').ok_or_else(|| SchemaError::MalformedLine {
                line,
                reason: format!("bad valid range `{pair}`"),
            })?;
            Ok((parse_time(a.trim(), line)?, parse_time(b.trim(), line)?))
        })
        .collect()
}

struct Record<'a> {
    line: usize,
    time: f64,
    label: &'a str,
}

/// Parses `.sfa` text. `source` is used unless a `# source=` header overrides it.
pub fn parse_annotation(text: &str, source: SourceId, profile: &MappingProfile) -> Result<Annotation> {
    let mut source = source;
    let mut valid_ranges = None;
    let mut records = Vec::new();

    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('#') {
            for pair in header.split_whitespace() {
                let Some((key, value)) = pair.split_once('=') else { continue };
                match key {
                    "source" => {
                        source = SourceId(value.parse().map_err(|_| SchemaError::MalformedLine {
                            line,
                            reason: format!("bad source `{value}`"),
                        })?)
                    }
                    "valid_ranges" => valid_ranges = Some(parse_ranges(value, line)?),
                    _ => {}
                }
            }
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let (Some(time), Some(label), None) = (tokens.next(), tokens.next(), tokens.next()) else {
            return Err(SchemaError::MalformedLine { line, reason: "expected `<seconds> <label>`".into() });
        };
        records.push(Record { line, time: parse_time(time, line)?, label });
    }

    for pair in records.windows(2) {
        if pair[1].time <= pair[0].time {
            return Err(SchemaError::NonMonotonicTimes { line: pair[1].line });
        }
    }
    let terminal = records.pop().ok_or(SchemaError::MissingEnd)?;
    if !terminal.label.eq_ignore_ascii_case("end") {
        return Err(SchemaError::MissingEnd);
    }
    let segments = records
        .iter()
        .map(|r| Ok(Segment::new(r.time, map_label(r.label, profile)?)))
        .collect::<Result<Vec<_>>>()?;
    let ann = Annotation::new(segments, terminal.time, source)?;
    match valid_ranges {
        Some(ranges) => ann.with_valid_ranges(ranges),
        None => Ok(ann),
    }
}

/// Writes `.sfa` text with three fractional digits per time.
pub fn serialize_annotation(ann: &Annotation) -> String {
    let mut out = format!("# source={}\n", ann.source);
    if let Some(ranges) = &ann.valid_ranges {
        let joined: Vec<String> = ranges.iter().map(|(a, b)| format!("{a:.3}-{b:.3}")).collect();
        out.push_str(&format!("# valid_ranges={}\n", joined.join(";")));
    }
    for seg in &ann.segments {
        out.push_str(&format!("{:.3} {}\n", seg.start, seg.label));
    }
    out.push_str(&format!("{:.3} end\n", ann.end));
    out
}

/// Parses span text (`<start> <end> <label>` per line), the form used by
/// annotators that emit explicit segment ends.
pub fn parse_spans(text: &str, profile: &MappingProfile) -> Result<Vec<Span>> {
    let mut spans: Vec<Span> = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let (Some(a), Some(b), Some(label), None) = (tokens.next(), tokens.next(), tokens.next(), tokens.next())
        else {
            return Err(SchemaError::MalformedLine { line, reason: "expected `<start> <end> <label>`".into() });
        };
        let (start, end) = (parse_time(a, line)?, parse_time(b, line)?);
        if end <= start {
            return Err(SchemaError::MalformedLine { line, reason: format!("span end {end} <= start {start}") });
        }
        if spans.last().is_some_and(|prev| start <= prev.start) {
            return Err(SchemaError::NonMonotonicTimes { line });
        }
        spans.push(Span { start, end, label: map_label(label, profile)? });
    }
    Ok(spans)
}
