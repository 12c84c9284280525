//! Shared domain types for the evaluation harness.
//!
//! Everything here is immutable after construction and safe to share across
//! worker threads.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Task category of a dataset; selects the default scoring metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Captioning,
    MultipleChoice,
    YesNo,
    OpenVqa,
}

impl TaskType {
    /// Metric id used when a manifest does not override it.
    pub fn default_metric(self) -> &'static str {
        match self {
            TaskType::Captioning => "sentence_bleu",
            TaskType::MultipleChoice => "exact_match",
            TaskType::YesNo => "exact_match",
            TaskType::OpenVqa => "token_f1",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskType::Captioning => "captioning",
            TaskType::MultipleChoice => "multiple_choice",
            TaskType::YesNo => "yes_no",
            TaskType::OpenVqa => "open_vqa",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for TaskType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "captioning" => Ok(TaskType::Captioning),
            "multiple_choice" => Ok(TaskType::MultipleChoice),
            "yes_no" => Ok(TaskType::YesNo),
            "open_vqa" => Ok(TaskType::OpenVqa),
            other => Err(format!(
                "unknown task type '{other}' (expected captioning, multiple_choice, yes_no, or open_vqa)"
            )),
        }
    }
}

/// Axis-aligned pixel rectangle, `(top, left)` inclusive, sizes in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub top: u32,
    pub left: u32,
    pub height: u32,
    pub width: u32,
}

impl PixelRect {
    pub fn new(top: u32, left: u32, height: u32, width: u32) -> Self {
        Self { top, left, height, width }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.height) * u64::from(self.width)
    }

    pub fn bottom(&self) -> u32 {
        self.top + self.height
    }

    pub fn right(&self) -> u32 {
        self.left + self.width
    }

    /// True when `other` lies entirely within `self`.
    pub fn contains(&self, other: &PixelRect) -> bool {
        other.top >= self.top
            && other.left >= self.left
            && other.bottom() <= self.bottom()
            && other.right() <= self.right()
    }

    /// True when the two rectangles share at least one pixel.
    pub fn intersects(&self, other: &PixelRect) -> bool {
        self.top < other.bottom()
            && other.top < self.bottom()
            && self.left < other.right()
            && other.left < self.right()
    }
}

/// Side length of the n x n patch grid; n = 1 is the full image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridSpec {
    n: u32,
}

impl GridSpec {
    pub fn new(n: u32) -> Result<Self, String> {
        if n == 0 {
            return Err("grid side must be at least 1".to_string());
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// Number of patches in the grid.
    pub fn cells(&self) -> u32 {
        self.n * self.n
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{0}x{0}", self.n)
    }
}

/// One image presented to the model: the full image or a single patch crop.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct View {
    pub sample_id: String,
    pub kind: ViewKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "view", rename_all = "snake_case")]
pub enum ViewKind {
    Full {
        bounds: PixelRect,
    },
    Patch {
        grid: GridSpec,
        row: u32,
        col: u32,
        bounds: PixelRect,
    },
}

impl View {
    pub fn full(sample_id: impl Into<String>, height: u32, width: u32) -> Self {
        Self {
            sample_id: sample_id.into(),
            kind: ViewKind::Full { bounds: PixelRect::new(0, 0, height, width) },
        }
    }

    pub fn patch(
        sample_id: impl Into<String>,
        grid: GridSpec,
        row: u32,
        col: u32,
        bounds: PixelRect,
    ) -> Self {
        debug_assert!(row < grid.n() && col < grid.n());
        Self { sample_id: sample_id.into(), kind: ViewKind::Patch { grid, row, col, bounds } }
    }

    pub fn pixel_bounds(&self) -> PixelRect {
        match &self.kind {
            ViewKind::Full { bounds } => *bounds,
            ViewKind::Patch { bounds, .. } => *bounds,
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self.kind, ViewKind::Full { .. })
    }

    /// Compact descriptor used in cache keys and record files: `full` or
    /// `n{n}r{row}c{col}` (0-based indices).
    pub fn descriptor(&self) -> String {
        match &self.kind {
            ViewKind::Full { .. } => "full".to_string(),
            ViewKind::Patch { grid, row, col, .. } => format!("n{}r{row}c{col}", grid.n()),
        }
    }

    /// Deterministic ordering: full view first, then patches by (n, row, col).
    pub fn sort_key(&self) -> (u8, u32, u32, u32) {
        match &self.kind {
            ViewKind::Full { .. } => (0, 0, 0, 0),
            ViewKind::Patch { grid, row, col, .. } => (1, grid.n(), *row, *col),
        }
    }
}

/// One image+query+ground-truth evaluation instance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: image::RgbImage,
    pub query: String,
    pub ground_truth: Vec<String>,
    pub task: TaskType,
    pub choices: Option<Vec<String>>,
}

/// A model response to one view together with its per-sample score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub view: View,
    pub raw_response: String,
    pub normalized_answer: String,
    pub score: f64,
}

/// PCRI value; explicitly undefined when the full-image score is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pcri {
    Defined(f64),
    Undefined,
}

impl Pcri {
    pub fn value(&self) -> Option<f64> {
        match self {
            Pcri::Defined(v) => Some(*v),
            Pcri::Undefined => None,
        }
    }

    pub fn is_defined(&self) -> bool {
        matches!(self, Pcri::Defined(_))
    }
}

impl Serialize for Pcri {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pcri {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(match Option::<f64>::deserialize(deserializer)? {
            Some(v) => Pcri::Defined(v),
            None => Pcri::Undefined,
        })
    }
}

/// Verdict of the chance-floor validity gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateVerdict {
    Valid,
    NearChanceUnstable,
}

impl fmt::Display for GateVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateVerdict::Valid => f.write_str("valid"),
            GateVerdict::NearChanceUnstable => f.write_str("near_chance_unstable"),
        }
    }
}

/// Interpretation band of a PCRI value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpretationLabel {
    /// |PCRI| within the epsilon band: full image and best patch perform alike.
    Robust,
    /// Negative PCRI: the surrounding scene hurts; the model does better on a patch.
    GlobalDistracts,
    /// Positive PCRI: patch input omits information the model needs.
    NeedsGlobalContext,
    /// Gated out or undefined; not interpretable.
    Unreliable,
}

impl fmt::Display for InterpretationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InterpretationLabel::Robust => "robust",
            InterpretationLabel::GlobalDistracts => "global_distracts",
            InterpretationLabel::NeedsGlobalContext => "needs_global_context",
            InterpretationLabel::Unreliable => "unreliable",
        };
        f.write_str(s)
    }
}

/// Final per (model, dataset, n) result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcriResult {
    pub model_id: String,
    pub dataset_id: String,
    pub task: TaskType,
    pub n: u32,
    pub p_whole: f64,
    pub p_patch: f64,
    pub pcri: Pcri,
    pub se_whole: f64,
    pub chance_floor: f64,
    pub delta_min: f64,
    pub gate: GateVerdict,
    pub label: InterpretationLabel,
    pub sample_count: usize,
    pub failed_views: usize,
}

/// Generated image with a known target region and distractor field; lets the
/// synthetic model adapters answer analytically without reading pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub image_height: u32,
    pub image_width: u32,
    pub target: PixelRect,
    pub answer: String,
    pub distractors: Vec<PixelRect>,
}

impl SyntheticScene {
    /// Number of distractor glyphs at least partially visible in `bounds`.
    pub fn visible_distractors(&self, bounds: &PixelRect) -> usize {
        self.distractors.iter().filter(|d| bounds.intersects(d)).count()
    }

    /// Fraction of the image area covered by `bounds`.
    pub fn coverage(&self, bounds: &PixelRect) -> f64 {
        let image = u64::from(self.image_height) * u64::from(self.image_width);
        bounds.area() as f64 / image as f64
    }
}

/// Canonicalize a raw model response for scoring.
///
/// Lowercases, trims, strips terminal `.,!?` runs and collapses inner
/// whitespace. Multiple-choice answers like `"B) a red car"` reduce to the
/// option letter; yes/no answers reduce to their leading `yes`/`no`.
pub fn normalize_answer(raw: &str, task: TaskType) -> String {
    let lowered = raw.to_lowercase();
    // Trailing punctuation and whitespace are stripped together so that the
    // result never ends in either (keeps the function idempotent).
    let stripped = lowered
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | '!' | '?') || c.is_whitespace());
    let collapsed: String = stripped.split_whitespace().collect::<Vec<_>>().join(" ");

    match task {
        TaskType::MultipleChoice => {
            let mut chars = collapsed.chars();
            if let (Some(letter), second) = (chars.next(), chars.next()) {
                if letter.is_ascii_alphabetic() && matches!(second, Some(')') | Some('.')) {
                    return letter.to_string();
                }
            }
            collapsed
        }
        TaskType::YesNo => {
            if collapsed.starts_with("yes") {
                "yes".to_string()
            } else if collapsed.starts_with("no") {
                "no".to_string()
            } else {
                collapsed
            }
        }
        TaskType::Captioning | TaskType::OpenVqa => collapsed,
    }
}
