//! Dichotomized response matrices, one per chapter.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::StudentExerciseSummary;
use crate::par;
use crate::schema;

pub const DEFAULT_THRESHOLD: f64 = 0.70;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("exercises without a group and no default group: {}", .0.join(", "))]
    UnmappedExercises(Vec<String>),
    #[error("matrix shape mismatch: {0}")]
    Shape(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("bad matrix file: {0}")]
    Parse(String),
}

/// 1 iff `r >= threshold`.
pub fn dichotomize(r: f64, threshold: f64) -> u8 {
    u8::from(r >= threshold)
}

/// Students × items, row-major. `None` means the student never attempted
/// the item and contributes no likelihood term for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    pub group_id: String,
    pub item_ids: Vec<String>,
    pub student_ids: Vec<String>,
    cells: Vec<Option<bool>>,
}

impl ResponseMatrix {
    pub fn new(
        group_id: impl Into<String>,
        item_ids: Vec<String>,
        student_ids: Vec<String>,
        cells: Vec<Option<bool>>,
    ) -> Result<Self, MatrixError> {
        if cells.len() != item_ids.len() * student_ids.len() {
            return Err(MatrixError::Shape(format!(
                "{} cells for {} students x {} items",
                cells.len(),
                student_ids.len(),
                item_ids.len()
            )));
        }
        for ids in [&item_ids, &student_ids] {
            let mut seen = BTreeSet::new();
            for id in ids.iter() {
                if !seen.insert(id) {
                    return Err(MatrixError::DuplicateId(id.clone()));
                }
            }
        }
        Ok(ResponseMatrix { group_id: group_id.into(), item_ids, student_ids, cells })
    }

    /// Builds a matrix from rows of `0`, `1` or `-1` (missing). Ids are
    /// generated as `s000..` and `i00..`.
    pub fn from_rows(group_id: &str, rows: &[Vec<i8>]) -> Result<Self, MatrixError> {
        let n_items = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_items) {
            return Err(MatrixError::Shape("ragged rows".into()));
        }
        let items = (0..n_items).map(|i| format!("i{i:02}")).collect();
        let students = (0..rows.len()).map(|s| format!("s{s:03}")).collect();
        let cells = rows
            .iter()
            .flatten()
            .map(|&v| match v {
                0 => Some(false),
                1 => Some(true),
                _ => None,
            })
            .collect();
        ResponseMatrix::new(group_id, items, students, cells)
    }

    pub fn n_students(&self) -> usize {
        self.student_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn get(&self, student: usize, item: usize) -> Option<bool> {
        self.cells[student * self.n_items() + item]
    }

    pub fn row(&self, student: usize) -> &[Option<bool>] {
        let n = self.n_items();
        &self.cells[student * n..(student + 1) * n]
    }

    pub fn cells(&self) -> &[Option<bool>] {
        &self.cells
    }

    /// (observed, ones) for one item column.
    pub fn item_counts(&self, item: usize) -> (usize, usize) {
        (0..self.n_students()).fold((0, 0), |(obs, ones), s| match self.get(s, item) {
            Some(x) => (obs + 1, ones + usize::from(x)),
            None => (obs, ones),
        })
    }

    pub fn observed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn ones(&self) -> usize {
        self.cells.iter().filter(|c| **c == Some(true)).count()
    }

    /// Items whose observed cells are all 0, all 1, or absent.
    pub fn degenerate_items(&self) -> Vec<bool> {
        (0..self.n_items())
            .map(|i| {
                let (obs, ones) = self.item_counts(i);
                obs == 0 || ones == 0 || ones == obs
            })
            .collect()
    }

    /// CSV with a `student_id` column followed by one column per item;
    /// cells are `0`, `1` or `NA`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        schema::write_csv_preamble(&mut w, "response_matrix", &[format!("group={}", self.group_id)])?;
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["student_id".to_string()];
        header.extend(self.item_ids.iter().cloned());
        wtr.write_record(&header)?;
        for (s, id) in self.student_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(s).iter().map(|c| match c {
                Some(true) => "1".to_string(),
                Some(false) => "0".to_string(),
                None => "NA".to_string(),
            }));
            wtr.write_record(&rec)?;
        }
        wtr.flush()
    }

    pub fn read_csv<R: Read>(group_id: &str, r: R) -> Result<Self, MatrixError> {
        let mut rdr = schema::csv_reader(r);
        let header = rdr.headers().map_err(|e| MatrixError::Parse(e.to_string()))?.clone();
        if header.get(0) != Some("student_id") {
            return Err(MatrixError::Parse("first column must be student_id".into()));
        }
        let items: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut students = Vec::new();
        let mut cells = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| MatrixError::Parse(e.to_string()))?;
            students.push(rec[0].to_string());
            for v in rec.iter().skip(1) {
                cells.push(match v {
                    "1" => Some(true),
                    "0" => Some(false),
                    "NA" => None,
                    other => return Err(MatrixError::Parse(format!("bad cell {other:?}"))),
                });
            }
        }
        ResponseMatrix::new(group_id, items, students, cells)
    }
}

/// Exercise to chapter assignment.
///
/// Resolution order: explicit `groups` entry, then `default_group`, then the
/// event's `module_id` when `use_module_id` is set.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Grouping {
    #[serde(default)]
    pub groups: BTreeMap<String, String>,
    #[serde(default)]
    pub default_group: Option<String>,
    #[serde(default)]
    pub use_module_id: bool,
}

impl Grouping {
    /// Groups by the `module_id` logged with each exercise.
    pub fn by_module() -> Self {
        Grouping { use_module_id: true, ..Grouping::default() }
    }

    pub fn resolve<'a>(&'a self, exercise_id: &str, module_id: &'a str) -> Option<&'a str> {
        self.groups
            .get(exercise_id)
            .map(String::as_str)
            .or(self.default_group.as_deref())
            .or_else(|| self.use_module_id.then_some(module_id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSet {
    /// Sorted by group id.
    pub matrices: Vec<ResponseMatrix>,
    /// Groups dropped because they had no observed cells.
    pub empty_groups: Vec<String>,
}

pub fn build_matrices(
    summaries: &[StudentExerciseSummary],
    grouping: &Grouping,
    threshold: f64,
) -> Result<MatrixSet, MatrixError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MatrixError::InvalidThreshold(threshold));
    }
    let mut unmapped = BTreeSet::new();
    let mut by_group: BTreeMap<&str, Vec<&StudentExerciseSummary>> = BTreeMap::new();
    for s in summaries {
        match grouping.resolve(&s.exercise_id, &s.module_id) {
            Some(g) => by_group.entry(g).or_default().push(s),
            None => {
                unmapped.insert(s.exercise_id.clone());
            }
        }
    }
    if !unmapped.is_empty() {
        return Err(MatrixError::UnmappedExercises(unmapped.into_iter().collect()));
    }
    let groups: Vec<(&str, Vec<&StudentExerciseSummary>)> = by_group.into_iter().collect();
    let built = par::map(&groups, |(g, rows)| group_matrix(g, rows, threshold));
    let mut matrices = Vec::new();
    let mut empty_groups = Vec::new();
    for (g, m) in groups.iter().zip(built) {
        match m {
            Some(m) => matrices.push(m),
            None => empty_groups.push(g.0.to_string()),
        }
    }
    Ok(MatrixSet { matrices, empty_groups })
}

fn group_matrix(group: &str, rows: &[&StudentExerciseSummary], threshold: f64) -> Option<ResponseMatrix> {
    let items: BTreeSet<&str> = rows.iter().map(|s| s.exercise_id.as_str()).collect();
    let students: BTreeSet<&str> =
        rows.iter().filter(|s| s.n_attempts > 0).map(|s| s.student_id.as_str()).collect();
    if students.is_empty() {
        return None;
    }
    let item_ids: Vec<String> = items.iter().map(|s| s.to_string()).collect();
    let student_ids: Vec<String> = students.iter().map(|s| s.to_string()).collect();
    let item_pos: BTreeMap<&str, usize> = items.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let student_pos: BTreeMap<&str, usize> = students.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut cells = vec![None; item_ids.len() * student_ids.len()];
    for s in rows {
        if let Some(r) = s.r {
            let (si, ii) = (student_pos[s.student_id.as_str()], item_pos[s.exercise_id.as_str()]);
            cells[si * item_ids.len() + ii] = Some(dichotomize(r, threshold) == 1);
        }
    }
    ResponseMatrix::new(group, item_ids, student_ids, cells).ok()
}
