//! Behavioral difficulty metrics per exercise.
//!
//! - `r`  = correct attempts / attempts, per student
//! - `dl` = 1 - mean(r) over students with at least one attempt
//! - `hr` = hints / (hints + attempts)
//! - `ir` = wrong attempts / attempts
//!
//! `hr` and `ir` pool raw counts across students by default. `dl` is computed
//! in exact rational arithmetic and rounded once to `f64`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use num::{BigInt, BigRational, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::StudentExerciseSummary;
use crate::par;
use crate::schema::{self, DL_NOTE, SCHEMA_VERSION};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ratio undefined: no attempts")]
    UndefinedRatio,
    #[error("no students with attempts")]
    NoParticipants,
    #[error("no hints or attempts")]
    NoActivity,
    #[error("no attempts")]
    NoAttempts,
    #[error("dl {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("bad metrics file: {0}")]
    Parse(String),
}

/// `dl` quartile band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::Q1 => "Q1",
            Band::Q2 => "Q2",
            Band::Q3 => "Q3",
            Band::Q4 => "Q4",
        }
    }

    pub fn parse(s: &str) -> Option<Band> {
        match s {
            "Q1" => Some(Band::Q1),
            "Q2" => Some(Band::Q2),
            "Q3" => Some(Band::Q3),
            "Q4" => Some(Band::Q4),
            _ => None,
        }
    }
}

/// Lower edge of Q2.
pub const Q2_LOWER: f64 = 0.12;
/// Lower edge of Q3.
pub const Q3_LOWER: f64 = 0.21;
/// Upper edge of Q3 (inclusive); Q4 is strictly above.
pub const Q3_UPPER: f64 = 0.34;

/// Bands are `[0, 0.12)`, `[0.12, 0.21)`, `[0.21, 0.34]`, `(0.34, 1]`.
pub fn quartile_band(dl: f64) -> Result<Band, MetricsError> {
    if !(0.0..=1.0).contains(&dl) {
        return Err(MetricsError::OutOfRange(dl));
    }
    Ok(if dl > Q3_UPPER {
        Band::Q4
    } else if dl >= Q3_LOWER {
        Band::Q3
    } else if dl >= Q2_LOWER {
        Band::Q2
    } else {
        Band::Q1
    })
}

pub fn correct_ratio(summary: &StudentExerciseSummary) -> Result<f64, MetricsError> {
    if summary.n_attempts == 0 {
        return Err(MetricsError::UndefinedRatio);
    }
    Ok(summary.n_correct as f64 / summary.n_attempts as f64)
}

/// Exact `dl` over the summaries with at least one attempt.
pub fn difficulty_level_exact(summaries: &[StudentExerciseSummary]) -> Result<BigRational, MetricsError> {
    let mut sum_r = BigRational::zero();
    let mut n = 0u64;
    for s in summaries.iter().filter(|s| s.n_attempts > 0) {
        sum_r += BigRational::new(BigInt::from(s.n_correct), BigInt::from(s.n_attempts));
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::NoParticipants);
    }
    Ok(BigRational::from_integer(BigInt::from(1)) - sum_r / BigInt::from(n))
}

pub fn difficulty_level(summaries: &[StudentExerciseSummary]) -> Result<f64, MetricsError> {
    difficulty_level_exact(summaries).map(|q| rational_to_f64(&q))
}

pub(crate) fn rational_to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

fn totals(summaries: &[StudentExerciseSummary]) -> (u64, u64, u64) {
    summaries.iter().fold((0, 0, 0), |(h, a, w), s| (h + s.n_hints, a + s.n_attempts, w + s.n_wrong))
}

/// Pooled hint ratio.
pub fn hint_ratio(summaries: &[StudentExerciseSummary]) -> Result<f64, MetricsError> {
    let (hints, attempts, _) = totals(summaries);
    if hints + attempts == 0 {
        return Err(MetricsError::NoActivity);
    }
    Ok(hints as f64 / (hints + attempts) as f64)
}

/// Pooled incorrect ratio.
pub fn incorrect_ratio(summaries: &[StudentExerciseSummary]) -> Result<f64, MetricsError> {
    let (_, attempts, wrong) = totals(summaries);
    if attempts == 0 {
        return Err(MetricsError::NoAttempts);
    }
    Ok(wrong as f64 / attempts as f64)
}

/// Mean of per-student hint ratios over students with any activity.
pub fn hint_ratio_student_mean(summaries: &[StudentExerciseSummary]) -> Result<f64, MetricsError> {
    let ratios: Vec<f64> = summaries
        .iter()
        .filter(|s| s.n_hints + s.n_attempts > 0)
        .map(|s| s.n_hints as f64 / (s.n_hints + s.n_attempts) as f64)
        .collect();
    mean(&ratios).ok_or(MetricsError::NoActivity)
}

/// Mean of per-student incorrect ratios over students with attempts.
pub fn incorrect_ratio_student_mean(summaries: &[StudentExerciseSummary]) -> Result<f64, MetricsError> {
    let ratios: Vec<f64> = summaries
        .iter()
        .filter(|s| s.n_attempts > 0)
        .map(|s| s.n_wrong as f64 / s.n_attempts as f64)
        .collect();
    mean(&ratios).ok_or(MetricsError::NoAttempts)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioPooling {
    /// Sum counts over students, then divide.
    #[default]
    Pooled,
    /// Average the per-student ratios.
    StudentMean,
}

/// Pooled and per-student-mean ratios further apart than this raise a warning.
pub const POOLING_DIVERGENCE_WARN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseMetrics {
    pub exercise_id: String,
    pub module_id: String,
    /// Students with at least one attempt.
    pub n_students: u64,
    pub dl: Option<f64>,
    pub hr: Option<f64>,
    pub ir: Option<f64>,
    pub band: Option<Band>,
    pub total_attempts: u64,
    pub total_correct: u64,
    pub total_wrong: u64,
    pub total_hints: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub schema_version: u32,
    pub pooling: RatioPooling,
    pub notes: Vec<String>,
    pub rows: Vec<ExerciseMetrics>,
    pub warnings: Vec<String>,
}

/// Metrics for every exercise in `summaries`, sorted by exercise id.
pub fn compute_metrics(summaries: &[StudentExerciseSummary], pooling: RatioPooling) -> MetricsTable {
    let mut by_exercise: BTreeMap<&str, Vec<StudentExerciseSummary>> = BTreeMap::new();
    for s in summaries {
        by_exercise.entry(&s.exercise_id).or_default().push(s.clone());
    }
    let groups: Vec<(&str, Vec<StudentExerciseSummary>)> = by_exercise.into_iter().collect();
    let computed = par::map(&groups, |(id, rows)| exercise_metrics(id, rows, pooling));
    let mut rows = Vec::with_capacity(computed.len());
    let mut warnings = Vec::new();
    for (m, mut w) in computed {
        rows.push(m);
        warnings.append(&mut w);
    }
    MetricsTable { schema_version: SCHEMA_VERSION, pooling, notes: vec![DL_NOTE.to_string()], rows, warnings }
}

fn exercise_metrics(
    id: &str,
    rows: &[StudentExerciseSummary],
    pooling: RatioPooling,
) -> (ExerciseMetrics, Vec<String>) {
    let mut warnings = Vec::new();
    let (hints, attempts, wrong) = totals(rows);
    let dl = difficulty_level(rows).ok();
    if dl.is_none() {
        warnings.push(format!("exercise {id}: no attempts, dl undefined"));
    }
    let pooled = (hint_ratio(rows).ok(), incorrect_ratio(rows).ok());
    let student = (hint_ratio_student_mean(rows).ok(), incorrect_ratio_student_mean(rows).ok());
    for (name, p, s) in [("hr", pooled.0, student.0), ("ir", pooled.1, student.1)] {
        if let (Some(p), Some(s)) = (p, s) {
            if (p - s).abs() > POOLING_DIVERGENCE_WARN {
                warnings.push(format!(
                    "exercise {id}: pooled {name} {p:.4} and per-student mean {s:.4} differ by more than {POOLING_DIVERGENCE_WARN}"
                ));
            }
        }
    }
    let (hr, ir) = match pooling {
        RatioPooling::Pooled => pooled,
        RatioPooling::StudentMean => student,
    };
    let module_id = rows.iter().map(|r| r.module_id.as_str()).min().unwrap_or_default().to_string();
    let m = ExerciseMetrics {
        exercise_id: id.to_string(),
        module_id,
        n_students: rows.iter().filter(|r| r.n_attempts > 0).count() as u64,
        dl,
        hr,
        ir,
        band: dl.and_then(|d| quartile_band(d).ok()),
        total_attempts: attempts,
        total_correct: attempts - wrong,
        total_wrong: wrong,
        total_hints: hints,
    };
    (m, warnings)
}

pub const METRICS_HEADER: [&str; 7] = ["exercise_id", "module_id", "n_students", "dl", "hr", "ir", "band"];

pub fn write_metrics_csv<W: Write>(mut w: W, table: &MetricsTable) -> std::io::Result<()> {
    let mut notes = table.notes.clone();
    notes.push(format!("pooling={}", pooling_name(table.pooling)));
    schema::write_csv_preamble(&mut w, "metrics", &notes)?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(METRICS_HEADER)?;
    for m in &table.rows {
        wtr.write_record([
            m.exercise_id.clone(),
            m.module_id.clone(),
            m.n_students.to_string(),
            schema::fmt_opt(m.dl, schema::fmt_ratio),
            schema::fmt_opt(m.hr, schema::fmt_ratio),
            schema::fmt_opt(m.ir, schema::fmt_ratio),
            schema::fmt_opt(m.band, |b| b.as_str().to_string()),
        ])?;
    }
    wtr.flush()
}

fn pooling_name(p: RatioPooling) -> &'static str {
    match p {
        RatioPooling::Pooled => "pooled",
        RatioPooling::StudentMean => "student_mean",
    }
}

/// Reads the CSV form back. Ratios come back at the written 4-decimal
/// precision and the raw tallies are not part of the CSV, so they read as 0.
pub fn read_metrics_csv<R: Read>(r: R) -> Result<Vec<ExerciseMetrics>, MetricsError> {
    let mut rdr = schema::csv_reader(r);
    let header = rdr.headers().map_err(|e| MetricsError::Parse(e.to_string()))?.clone();
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(MetricsError::Parse(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let opt = |s: &str| -> Result<Option<f64>, MetricsError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| MetricsError::Parse(format!("{s:?}: {e}")))
        }
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| MetricsError::Parse(e.to_string()))?;
        if rec.len() != METRICS_HEADER.len() {
            return Err(MetricsError::Parse(format!("row has {} fields", rec.len())));
        }
        let band = if rec[6].is_empty() {
            None
        } else {
            Some(Band::parse(&rec[6]).ok_or_else(|| MetricsError::Parse(format!("bad band {:?}", &rec[6])))?)
        };
        out.push(ExerciseMetrics {
            exercise_id: rec[0].to_string(),
            module_id: rec[1].to_string(),
            n_students: rec[2].parse().map_err(|e| MetricsError::Parse(format!("n_students: {e}")))?,
            dl: opt(&rec[3])?,
            hr: opt(&rec[4])?,
            ir: opt(&rec[5])?,
            band,
            total_attempts: 0,
            total_correct: 0,
            total_wrong: 0,
            total_hints: 0,
        });
    }
    Ok(out)
}
