//! CSV forms of item parameters, abilities and curve tables.

use std::io::{Read, Write};

use super::{AbilityEstimate, CurveTable, IrtError, ItemParameters};
use crate::schema;

pub const PARAMS_HEADER: [&str; 6] = ["item_id", "a", "b", "se_a", "se_b", "degenerate"];

/// Floats are written in shortest round-trip form.
pub fn write_params_csv<W: Write>(mut w: W, params: &[ItemParameters], notes: &[String]) -> std::io::Result<()> {
    schema::write_csv_preamble(&mut w, "item_parameters", notes)?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(PARAMS_HEADER)?;
    for p in params {
        wtr.write_record([
            p.item_id.clone(),
            p.a.to_string(),
            p.b.to_string(),
            schema::fmt_opt(p.se_a, |x| x.to_string()),
            schema::fmt_opt(p.se_b, |x| x.to_string()),
            p.degenerate.to_string(),
        ])?;
    }
    wtr.flush()
}

pub fn read_params_csv<R: Read>(r: R) -> Result<Vec<ItemParameters>, IrtError> {
    let mut rdr = schema::csv_reader(r);
    let header = rdr.headers().map_err(|e| IrtError::Parse(e.to_string()))?.clone();
    if header.iter().ne(PARAMS_HEADER.iter().copied()) {
        return Err(IrtError::Parse(format!(
            "expected header {}, found {}",
            PARAMS_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let num = |s: &str, what: &str| -> Result<f64, IrtError> {
        let v: f64 = s.parse().map_err(|e| IrtError::Parse(format!("{what} {s:?}: {e}")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(IrtError::Parse(format!("{what} must be finite")))
        }
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IrtError::Parse(e.to_string()))?;
        if rec.len() != PARAMS_HEADER.len() {
            return Err(IrtError::Parse(format!("row has {} fields", rec.len())));
        }
        let opt = |i: usize, what: &str| -> Result<Option<f64>, IrtError> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                num(&rec[i], what).map(Some)
            }
        };
        let degenerate = match &rec[5] {
            "true" => true,
            "false" | "" => false,
            other => return Err(IrtError::Parse(format!("degenerate {other:?}"))),
        };
        out.push(ItemParameters {
            item_id: rec[0].to_string(),
            a: num(&rec[1], "a")?,
            b: num(&rec[2], "b")?,
            se_a: opt(3, "se_a")?,
            se_b: opt(4, "se_b")?,
            degenerate,
        });
    }
    Ok(out)
}

/// Accepts either a bare array of parameters or an object with an `items` array.
pub fn read_params_json<R: Read>(r: R) -> Result<Vec<ItemParameters>, IrtError> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum Doc {
        List(Vec<ItemParameters>),
        Wrapped { items: Vec<ItemParameters> },
    }
    let doc: Doc = serde_json::from_reader(r).map_err(|e| IrtError::Parse(e.to_string()))?;
    let items = match doc {
        Doc::List(v) | Doc::Wrapped { items: v } => v,
    };
    if items.iter().any(|p| !p.a.is_finite() || !p.b.is_finite()) {
        return Err(IrtError::Parse("parameters must be finite".into()));
    }
    Ok(items)
}

pub fn write_abilities_csv<W: Write>(mut w: W, abilities: &[AbilityEstimate]) -> std::io::Result<()> {
    schema::write_csv_preamble(&mut w, "abilities", &[])?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["student_id", "theta", "se_theta"])?;
    for a in abilities {
        wtr.write_record([a.student_id.clone(), a.theta.to_string(), a.se_theta.to_string()])?;
    }
    wtr.flush()
}

/// Columns: `theta`, `icc:<item>` per item, `iic:<item>` per item, `tif`.
pub fn write_curves_csv<W: Write>(mut w: W, table: &CurveTable) -> std::io::Result<()> {
    schema::write_csv_preamble(&mut w, "curves", &[])?;
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["theta".to_string()];
    header.extend(table.item_ids.iter().map(|id| format!("icc:{id}")));
    header.extend(table.item_ids.iter().map(|id| format!("iic:{id}")));
    header.push("tif".to_string());
    wtr.write_record(&header)?;
    for (row, theta) in table.thetas.iter().enumerate() {
        let mut rec = vec![theta.to_string()];
        rec.extend(table.prob[row].iter().map(f64::to_string));
        rec.extend(table.info[row].iter().map(f64::to_string));
        rec.push(table.tif[row].to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()
}
