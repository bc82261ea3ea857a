//! Versioning and small shared helpers for emitted files.
//!
//! Every CSV we emit (other than event logs, whose header is fixed) starts
//! with `#` comment lines carrying the schema version and any notes. Readers
//! built with [`csv_reader`] skip them.

use std::io::{Read, Write};

pub const SCHEMA_VERSION: u32 = 1;

/// Note attached to every metrics report describing how `dl` is computed.
pub const DL_NOTE: &str =
    "dl = 1 - mean(r) over students with at least one attempt (mean incorrectness)";

/// Writes the schema preamble for a CSV file.
pub fn write_csv_preamble<W: Write>(w: &mut W, kind: &str, notes: &[String]) -> std::io::Result<()> {
    writeln!(w, "# {kind} schema_version={SCHEMA_VERSION}")?;
    for n in notes {
        writeln!(w, "# {}", n.replace('\n', " "))?;
    }
    Ok(())
}

/// Reads the `schema_version=N` tag from the first line of a CSV file, if any.
pub fn csv_schema_version(text: &str) -> Option<u32> {
    let first = text.lines().next()?;
    let rest = first.strip_prefix('#')?;
    rest.split_whitespace()
        .find_map(|tok| tok.strip_prefix("schema_version="))
        .and_then(|v| v.parse().ok())
}

pub fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::None)
        .from_reader(r)
}

/// Fixed 4-decimal rendering used for ratio columns.
pub fn fmt_ratio(x: f64) -> String {
    format!("{x:.4}")
}

pub fn fmt_opt<T, F: Fn(T) -> String>(v: Option<T>, f: F) -> String {
    v.map(f).unwrap_or_default()
}

/// Makes a string safe to use as a file name component.
pub fn file_stem(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "_".to_string()
    } else {
        s
    }
}
