//! Item quality labels and good/poor verdicts from fitted `(a, b)`.
//!
//! Discrimination labels use contiguous half-open intervals on the tabulated
//! lower edges:
//!
//! | label     | a               |
//! |-----------|-----------------|
//! | None      | a < 0.01        |
//! | Very Low  | [0.01, 0.35)    |
//! | Low       | [0.35, 0.65)    |
//! | Moderate  | [0.65, 1.35)    |
//! | High      | [1.35, 1.70)    |
//! | Very High | a >= 1.70       |
//!
//! Difficulty: `b > 1` is Hard, `b < -1` is Easy, otherwise Medium. An item
//! is Poor when its discrimination is negative, when it is easy and barely
//! discriminates (None or Very Low), or when its fit is degenerate.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::irt::{difficult_at_average, ItemParameters};
use crate::metrics::{Band, ExerciseMetrics};
use crate::schema::{self, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiscriminationLabel {
    None,
    #[serde(rename = "Very Low")]
    VeryLow,
    Low,
    Moderate,
    High,
    #[serde(rename = "Very High")]
    VeryHigh,
}

impl DiscriminationLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscriminationLabel::None => "None",
            DiscriminationLabel::VeryLow => "Very Low",
            DiscriminationLabel::Low => "Low",
            DiscriminationLabel::Moderate => "Moderate",
            DiscriminationLabel::High => "High",
            DiscriminationLabel::VeryHigh => "Very High",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DifficultyLabel {
    Easy,
    Medium,
    Hard,
}

impl DifficultyLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            DifficultyLabel::Easy => "Easy",
            DifficultyLabel::Medium => "Medium",
            DifficultyLabel::Hard => "Hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Good,
    Poor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoorReason {
    NegativeDiscrimination,
    LowDiscriminationEasyItem,
    Degenerate,
}

impl PoorReason {
    pub fn as_str(self) -> &'static str {
        match self {
            PoorReason::NegativeDiscrimination => "negative_discrimination",
            PoorReason::LowDiscriminationEasyItem => "low_discrimination_easy_item",
            PoorReason::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Treat every `b < 0` as Easy, so an item with `b = -0.20` counts as
    /// Easy for the Poor check too.
    pub table2_compat: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityVerdict {
    pub item_id: String,
    pub discrimination_label: DiscriminationLabel,
    pub negative_discrimination: bool,
    pub difficulty_label: DifficultyLabel,
    pub verdict: Verdict,
    pub reasons: Vec<PoorReason>,
}

pub const VERY_LOW_LOWER: f64 = 0.01;
pub const LOW_LOWER: f64 = 0.35;
pub const MODERATE_LOWER: f64 = 0.65;
pub const HIGH_LOWER: f64 = 1.35;
pub const VERY_HIGH_LOWER: f64 = 1.70;

/// Label plus whether `a` is negative.
pub fn discrimination_label(a: f64) -> (DiscriminationLabel, bool) {
    let label = if a >= VERY_HIGH_LOWER {
        DiscriminationLabel::VeryHigh
    } else if a >= HIGH_LOWER {
        DiscriminationLabel::High
    } else if a >= MODERATE_LOWER {
        DiscriminationLabel::Moderate
    } else if a >= LOW_LOWER {
        DiscriminationLabel::Low
    } else if a >= VERY_LOW_LOWER {
        DiscriminationLabel::VeryLow
    } else {
        DiscriminationLabel::None
    };
    (label, a < 0.0)
}

pub fn difficulty_label(b: f64) -> DifficultyLabel {
    difficulty_label_with(b, ClassifierConfig::default())
}

pub fn difficulty_label_with(b: f64, config: ClassifierConfig) -> DifficultyLabel {
    let easy_below = if config.table2_compat { 0.0 } else { -1.0 };
    if b > 1.0 {
        DifficultyLabel::Hard
    } else if b < easy_below {
        DifficultyLabel::Easy
    } else {
        DifficultyLabel::Medium
    }
}

pub fn classify_quality(params: &ItemParameters, config: ClassifierConfig) -> QualityVerdict {
    let (disc, negative) = discrimination_label(params.a);
    let diff = difficulty_label_with(params.b, config);
    let mut reasons = Vec::new();
    if negative {
        reasons.push(PoorReason::NegativeDiscrimination);
    }
    if !negative
        && matches!(disc, DiscriminationLabel::None | DiscriminationLabel::VeryLow)
        && diff == DifficultyLabel::Easy
    {
        reasons.push(PoorReason::LowDiscriminationEasyItem);
    }
    if params.degenerate {
        reasons.push(PoorReason::Degenerate);
    }
    QualityVerdict {
        item_id: params.item_id.clone(),
        discrimination_label: disc,
        negative_discrimination: negative,
        difficulty_label: diff,
        verdict: if reasons.is_empty() { Verdict::Good } else { Verdict::Poor },
        reasons,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum QualityError {
    #[error("verdicts and parameters disagree on item ids: {0}")]
    IdMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub item_id: String,
    pub module_id: Option<String>,
    pub dl: Option<f64>,
    pub hr: Option<f64>,
    pub ir: Option<f64>,
    pub band: Option<Band>,
    pub a: f64,
    pub b: f64,
    pub se_a: Option<f64>,
    pub se_b: Option<f64>,
    pub discrimination_label: DiscriminationLabel,
    pub negative_discrimination: bool,
    pub difficulty_label: DifficultyLabel,
    pub difficult_at_average: bool,
    pub verdict: Verdict,
    pub reasons: Vec<PoorReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub n_items: usize,
    pub n_poor: usize,
    pub poor_by_reason: BTreeMap<PoorReason, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub schema_version: u32,
    pub table2_compat: bool,
    pub notes: Vec<String>,
    /// Sorted by `dl` descending (missing `dl` last), ties by item id.
    pub rows: Vec<ReportRow>,
    pub summary: ReportSummary,
    pub warnings: Vec<String>,
}

pub fn quality_report(
    verdicts: &[QualityVerdict],
    metrics: &[ExerciseMetrics],
    params: &[ItemParameters],
    config: ClassifierConfig,
) -> Result<QualityReport, QualityError> {
    let param_ids: BTreeSet<&str> = params.iter().map(|p| p.item_id.as_str()).collect();
    let verdict_by_id: BTreeMap<&str, &QualityVerdict> = verdicts.iter().map(|v| (v.item_id.as_str(), v)).collect();
    let verdict_ids: BTreeSet<&str> = verdict_by_id.keys().copied().collect();
    if param_ids != verdict_ids || param_ids.len() != params.len() || verdict_ids.len() != verdicts.len() {
        let diff: Vec<&str> = param_ids.symmetric_difference(&verdict_ids).copied().collect();
        let detail = if diff.is_empty() { "duplicate ids".to_string() } else { diff.join(", ") };
        return Err(QualityError::IdMismatch(detail));
    }
    let metrics_by_id: BTreeMap<&str, &ExerciseMetrics> =
        metrics.iter().map(|m| (m.exercise_id.as_str(), m)).collect();
    let mut warnings = Vec::new();
    let mut rows: Vec<ReportRow> = params
        .iter()
        .map(|p| {
            let v = verdict_by_id[p.item_id.as_str()];
            let m = metrics_by_id.get(p.item_id.as_str());
            if m.is_none() {
                warnings.push(format!("item {}: no metrics row", p.item_id));
            }
            ReportRow {
                item_id: p.item_id.clone(),
                module_id: m.map(|m| m.module_id.clone()),
                dl: m.and_then(|m| m.dl),
                hr: m.and_then(|m| m.hr),
                ir: m.and_then(|m| m.ir),
                band: m.and_then(|m| m.band),
                a: p.a,
                b: p.b,
                se_a: p.se_a,
                se_b: p.se_b,
                discrimination_label: v.discrimination_label,
                negative_discrimination: v.negative_discrimination,
                difficulty_label: v.difficulty_label,
                difficult_at_average: difficult_at_average(p),
                verdict: v.verdict,
                reasons: v.reasons.clone(),
            }
        })
        .collect();
    let unmatched = metrics.iter().filter(|m| !param_ids.contains(m.exercise_id.as_str())).count();
    if unmatched > 0 {
        warnings.push(format!("{unmatched} exercises have metrics but no item parameters"));
    }
    rows.sort_by(|x, y| match (x.dl, y.dl) {
        (Some(a), Some(b)) => b.total_cmp(&a).then_with(|| x.item_id.cmp(&y.item_id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => x.item_id.cmp(&y.item_id),
    });
    let mut poor_by_reason = BTreeMap::new();
    for r in &rows {
        for reason in &r.reasons {
            *poor_by_reason.entry(*reason).or_insert(0) += 1;
        }
    }
    let mut notes = vec![schema::DL_NOTE.to_string()];
    if config.table2_compat {
        notes.push("table2_compat: b < 0 labeled Easy".to_string());
    }
    Ok(QualityReport {
        schema_version: SCHEMA_VERSION,
        table2_compat: config.table2_compat,
        notes,
        summary: ReportSummary {
            n_items: rows.len(),
            n_poor: rows.iter().filter(|r| r.verdict == Verdict::Poor).count(),
            poor_by_reason,
        },
        rows,
        warnings,
    })
}

pub const REPORT_HEADER: [&str; 14] = [
    "item_id",
    "module_id",
    "dl",
    "hr",
    "ir",
    "band",
    "a",
    "b",
    "discrimination",
    "negative_discrimination",
    "difficulty",
    "difficult_at_average",
    "verdict",
    "reasons",
];

pub fn write_report_csv<W: Write>(mut w: W, report: &QualityReport) -> std::io::Result<()> {
    let mut notes = report.notes.clone();
    let by_reason: Vec<String> =
        report.summary.poor_by_reason.iter().map(|(r, n)| format!("{}={n}", r.as_str())).collect();
    notes.push(format!("poor {}/{} ({})", report.summary.n_poor, report.summary.n_items, by_reason.join(", ")));
    schema::write_csv_preamble(&mut w, "quality_report", &notes)?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(REPORT_HEADER)?;
    for r in &report.rows {
        wtr.write_record([
            r.item_id.clone(),
            r.module_id.clone().unwrap_or_default(),
            schema::fmt_opt(r.dl, schema::fmt_ratio),
            schema::fmt_opt(r.hr, schema::fmt_ratio),
            schema::fmt_opt(r.ir, schema::fmt_ratio),
            schema::fmt_opt(r.band, |b| b.as_str().to_string()),
            r.a.to_string(),
            r.b.to_string(),
            r.discrimination_label.as_str().to_string(),
            r.negative_discrimination.to_string(),
            r.difficulty_label.as_str().to_string(),
            r.difficult_at_average.to_string(),
            format!("{:?}", r.verdict),
            r.reasons.iter().map(|x| x.as_str()).collect::<Vec<_>>().join(";"),
        ])?;
    }
    wtr.flush()
}
