//! Interaction log ingestion.
//!
//! Two encodings are accepted. CSV with the exact header
//!
//! ```text
//! student_id,exercise_id,module_id,timestamp,kind,correct
//! ```
//!
//! and JSONL with one object per line using the same field names. `kind` is
//! `attempt` or `hint`; `correct` is `true`/`false` for attempts and empty
//! (CSV) or `null`/absent (JSONL) for hints. Timestamps are RFC 3339 and are
//! written back as UTC with millisecond precision.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::schema::SCHEMA_VERSION;

pub const CSV_HEADER: [&str; 6] = ["student_id", "exercise_id", "module_id", "timestamp", "kind", "correct"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Attempt,
    Hint,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Attempt => "attempt",
            EventKind::Hint => "hint",
        }
    }
}

/// One logged student action on one exercise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionEvent {
    pub student_id: String,
    pub exercise_id: String,
    pub module_id: String,
    pub timestamp: DateTime<Utc>,
    pub kind: EventKind,
    /// Present iff `kind` is [`EventKind::Attempt`].
    pub correct: Option<bool>,
}

impl InteractionEvent {
    pub fn attempt(student: &str, exercise: &str, module: &str, timestamp: DateTime<Utc>, correct: bool) -> Self {
        InteractionEvent {
            student_id: student.to_string(),
            exercise_id: exercise.to_string(),
            module_id: module.to_string(),
            timestamp,
            kind: EventKind::Attempt,
            correct: Some(correct),
        }
    }

    pub fn hint(student: &str, exercise: &str, module: &str, timestamp: DateTime<Utc>) -> Self {
        InteractionEvent {
            student_id: student.to_string(),
            exercise_id: exercise.to_string(),
            module_id: module.to_string(),
            timestamp,
            kind: EventKind::Hint,
            correct: None,
        }
    }

    /// Invariant problems with this event, empty when it is well formed.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.student_id.is_empty() {
            out.push("empty student_id".to_string());
        }
        if self.exercise_id.is_empty() {
            out.push("empty exercise_id".to_string());
        }
        match (self.kind, self.correct) {
            (EventKind::Hint, Some(c)) => out.push(format!("hint event carries correct={c}")),
            (EventKind::Attempt, None) => out.push("attempt event without correct flag".to_string()),
            _ => {}
        }
        out
    }
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl LogFormat {
    /// Infers the format from a file extension (`.csv`, `.jsonl`, `.ndjson`).
    pub fn from_path(path: &Path) -> Option<LogFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(LogFormat::Csv),
            "jsonl" | "ndjson" => Some(LogFormat::Jsonl),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unreadable stream: {0}")]
    UnreadableStream(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", content = "detail", rename_all = "snake_case")]
pub enum RowErrorKind {
    MalformedRow(String),
    UnknownKind(String),
}

/// A row that could not be turned into an event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line number in the input.
    pub line: usize,
    pub error: RowErrorKind,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.error {
            RowErrorKind::MalformedRow(reason) => write!(f, "line {}: malformed row: {reason}", self.line),
            RowErrorKind::UnknownKind(v) => write!(f, "line {}: unknown kind {v:?}", self.line),
        }
    }
}

/// Events in stream order plus every row that was rejected.
#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub events: Vec<InteractionEvent>,
    pub errors: Vec<RowError>,
}

pub fn parse_event_log<R: Read>(mut input: R, format: LogFormat) -> Result<ParsedLog, IngestError> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| IngestError::UnreadableStream(e.to_string()))?;
    match format {
        LogFormat::Csv => parse_csv(&text),
        LogFormat::Jsonl => Ok(parse_jsonl(&text)),
    }
}

fn parse_csv(text: &str) -> Result<ParsedLog, IngestError> {
    let mut out = ParsedLog::default();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| IngestError::UnreadableStream(e.to_string()))?
        .clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        if text.trim().is_empty() {
            return Ok(out);
        }
        out.errors.push(RowError {
            line: 1,
            error: RowErrorKind::MalformedRow(format!(
                "header must be `{}`, found `{}`",
                CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )),
        });
        return Ok(out);
    }
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                out.errors.push(RowError { line, error: RowErrorKind::MalformedRow(e.to_string()) });
                continue;
            }
        };
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != CSV_HEADER.len() {
            out.errors.push(RowError {
                line,
                error: RowErrorKind::MalformedRow(format!("expected 6 fields, found {}", rec.len())),
            });
            continue;
        }
        let correct = match &rec[5] {
            "" => None,
            "true" => Some(true),
            "false" => Some(false),
            other => {
                out.errors.push(RowError {
                    line,
                    error: RowErrorKind::MalformedRow(format!("correct must be true, false or empty, found {other:?}")),
                });
                continue;
            }
        };
        match build_event(&rec[0], &rec[1], &rec[2], &rec[3], &rec[4], correct) {
            Ok(ev) => out.events.push(ev),
            Err(error) => out.errors.push(RowError { line, error }),
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct JsonEvent {
    student_id: String,
    exercise_id: String,
    module_id: String,
    timestamp: String,
    kind: String,
    #[serde(default)]
    correct: Option<bool>,
}

fn parse_jsonl(text: &str) -> ParsedLog {
    let mut out = ParsedLog::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: JsonEvent = match serde_json::from_str(raw) {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(RowError { line, error: RowErrorKind::MalformedRow(e.to_string()) });
                continue;
            }
        };
        match build_event(&rec.student_id, &rec.exercise_id, &rec.module_id, &rec.timestamp, &rec.kind, rec.correct) {
            Ok(ev) => out.events.push(ev),
            Err(error) => out.errors.push(RowError { line, error }),
        }
    }
    out
}

fn build_event(
    student: &str,
    exercise: &str,
    module: &str,
    timestamp: &str,
    kind: &str,
    correct: Option<bool>,
) -> Result<InteractionEvent, RowErrorKind> {
    let kind = match kind {
        "attempt" => EventKind::Attempt,
        "hint" => EventKind::Hint,
        other => return Err(RowErrorKind::UnknownKind(other.to_string())),
    };
    let timestamp = DateTime::parse_from_rfc3339(timestamp)
        .map_err(|e| RowErrorKind::MalformedRow(format!("bad timestamp {timestamp:?}: {e}")))?
        .with_timezone(&Utc);
    let ev = InteractionEvent {
        student_id: student.to_string(),
        exercise_id: exercise.to_string(),
        module_id: module.to_string(),
        timestamp,
        kind,
        correct,
    };
    let problems = ev.problems();
    if problems.is_empty() {
        Ok(ev)
    } else {
        Err(RowErrorKind::MalformedRow(problems.join("; ")))
    }
}

#[derive(Serialize)]
struct JsonEventOut<'a> {
    student_id: &'a str,
    exercise_id: &'a str,
    module_id: &'a str,
    timestamp: String,
    kind: &'a str,
    correct: Option<bool>,
}

/// Writes events in the ingest schema, in the given order.
pub fn write_event_log<W: Write>(w: W, events: &[InteractionEvent], format: LogFormat) -> std::io::Result<()> {
    match format {
        LogFormat::Csv => {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(CSV_HEADER)?;
            for ev in events {
                let correct = match ev.correct {
                    Some(true) => "true",
                    Some(false) => "false",
                    None => "",
                };
                wtr.write_record([
                    ev.student_id.as_str(),
                    ev.exercise_id.as_str(),
                    ev.module_id.as_str(),
                    format_timestamp(&ev.timestamp).as_str(),
                    ev.kind.as_str(),
                    correct,
                ])?;
            }
            wtr.flush()
        }
        LogFormat::Jsonl => {
            let mut w = std::io::BufWriter::new(w);
            for ev in events {
                let rec = JsonEventOut {
                    student_id: &ev.student_id,
                    exercise_id: &ev.exercise_id,
                    module_id: &ev.module_id,
                    timestamp: format_timestamp(&ev.timestamp),
                    kind: ev.kind.as_str(),
                    correct: ev.correct,
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
            w.flush()
        }
    }
}

/// Per (student, exercise) tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentExerciseSummary {
    pub student_id: String,
    pub exercise_id: String,
    pub module_id: String,
    pub n_attempts: u64,
    pub n_correct: u64,
    pub n_wrong: u64,
    pub n_hints: u64,
    /// `n_correct / n_attempts`; `None` for hint-only pairs.
    pub r: Option<f64>,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    module_id: Option<String>,
    attempts: u64,
    correct: u64,
    hints: u64,
}

impl Tally {
    fn merge(&mut self, other: Tally) {
        self.attempts += other.attempts;
        self.correct += other.correct;
        self.hints += other.hints;
        self.module_id = match (self.module_id.take(), other.module_id) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }
}

/// One summary per (student, exercise) pair, sorted by that pair.
///
/// When events of one pair disagree on `module_id` the lexicographically
/// smallest is kept; [`validate_log`] reports the conflict.
pub fn aggregate(events: &[InteractionEvent]) -> Vec<StudentExerciseSummary> {
    type Acc = BTreeMap<(String, String), Tally>;
    let tallies: Acc = par::chunked_fold(
        events,
        Acc::new,
        |acc, _, ev| {
            let t = acc.entry((ev.student_id.clone(), ev.exercise_id.clone())).or_default();
            let single = Tally {
                module_id: Some(ev.module_id.clone()),
                attempts: u64::from(ev.kind == EventKind::Attempt),
                correct: u64::from(ev.kind == EventKind::Attempt && ev.correct == Some(true)),
                hints: u64::from(ev.kind == EventKind::Hint),
            };
            t.merge(single);
        },
        |total, part| {
            for (k, v) in part {
                total.entry(k).or_default().merge(v);
            }
        },
    );
    tallies
        .into_iter()
        .map(|((student_id, exercise_id), t)| StudentExerciseSummary {
            student_id,
            exercise_id,
            module_id: t.module_id.unwrap_or_default(),
            n_attempts: t.attempts,
            n_correct: t.correct,
            n_wrong: t.attempts - t.correct,
            n_hints: t.hints,
            r: (t.attempts > 0).then(|| t.correct as f64 / t.attempts as f64),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// 1-based input line, when the problem came from parsing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    /// 0-based index into the parsed event sequence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_index: Option<usize>,
    pub problem: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub schema_version: u32,
    pub events: usize,
    pub attempts: usize,
    pub hints: usize,
    pub distinct_students: usize,
    pub distinct_exercises: usize,
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    /// Prepends parse-time row errors to the violation list.
    pub fn with_row_errors(mut self, errors: &[RowError]) -> Self {
        let mut v: Vec<Violation> = errors
            .iter()
            .map(|e| Violation { line: Some(e.line), event_index: None, problem: e.to_string() })
            .collect();
        v.append(&mut self.violations);
        self.violations = v;
        self
    }
}

pub fn validate_log(events: &[InteractionEvent]) -> ValidationReport {
    let mut violations = Vec::new();
    let mut students = BTreeSet::new();
    let mut modules: BTreeMap<&str, &str> = BTreeMap::new();
    let mut attempts = 0;
    for (i, ev) in events.iter().enumerate() {
        for p in ev.problems() {
            violations.push(Violation { line: None, event_index: Some(i), problem: p });
        }
        students.insert(ev.student_id.as_str());
        if ev.kind == EventKind::Attempt {
            attempts += 1;
        }
        match modules.get(ev.exercise_id.as_str()) {
            Some(m) if *m != ev.module_id => violations.push(Violation {
                line: None,
                event_index: Some(i),
                problem: format!(
                    "exercise {} logged under module {} and {}",
                    ev.exercise_id, m, ev.module_id
                ),
            }),
            Some(_) => {}
            None => {
                modules.insert(&ev.exercise_id, &ev.module_id);
            }
        }
    }
    let mut warnings = Vec::new();
    if events.is_empty() {
        warnings.push("log contains no events".to_string());
    }
    ValidationReport {
        schema_version: SCHEMA_VERSION,
        events: events.len(),
        attempts,
        hints: events.len() - attempts,
        distinct_students: students.len(),
        distinct_exercises: modules.len(),
        violations,
        warnings,
    }
}

const SUMMARY_HEADER: [&str; 8] =
    ["student_id", "exercise_id", "module_id", "n_attempts", "n_correct", "n_wrong", "n_hints", "r"];

/// Writes summaries as CSV. `r` uses the shortest round-tripping decimal form.
pub fn write_summaries_csv<W: Write>(w: W, summaries: &[StudentExerciseSummary]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SUMMARY_HEADER)?;
    for s in summaries {
        wtr.write_record([
            s.student_id.clone(),
            s.exercise_id.clone(),
            s.module_id.clone(),
            s.n_attempts.to_string(),
            s.n_correct.to_string(),
            s.n_wrong.to_string(),
            s.n_hints.to_string(),
            s.r.map(|r| r.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()
}

pub fn read_summaries_csv<R: Read>(r: R) -> Result<Vec<StudentExerciseSummary>, csv::Error> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<u64, csv::Error> {
            rec[i].parse().map_err(|e| {
                csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{e}")))
            })
        };
        let r = if rec[7].is_empty() {
            None
        } else {
            Some(rec[7].parse::<f64>().map_err(|e| {
                csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{e}")))
            })?)
        };
        out.push(StudentExerciseSummary {
            student_id: rec[0].to_string(),
            exercise_id: rec[1].to_string(),
            module_id: rec[2].to_string(),
            n_attempts: num(3)?,
            n_correct: num(4)?,
            n_wrong: num(5)?,
            n_hints: num(6)?,
            r,
        });
    }
    Ok(out)
}
