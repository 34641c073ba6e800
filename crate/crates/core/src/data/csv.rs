//! Feature CSV: header `id,label,m,f0,...,f{D-1}`, one row per (sample,
//! modality), floats with 17 significant digits, LF line endings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Modality, PairedSample};
use crate::util::write_atomic;
use crate::{Error, Result};

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(dim: usize) -> String {
    let mut h = String::from("id,label,m");
    for j in 0..dim {
        let _ = write!(h, ",f{j}");
    }
    h.push('\n');
    h
}

/// Writes arbitrary `(id, label, modality, features)` rows.
pub fn write_features_csv<'a, I>(path: &Path, dim: usize, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (u64, usize, Modality, &'a [f64])>,
{
    let mut out = header(dim);
    for (id, label, m, f) in rows {
        if f.len() != dim {
            return Err(Error::dim(format!(
                "row {id}/{m} has {} features, header declares {dim}",
                f.len()
            )));
        }
        let _ = write!(out, "{id},{label},{m}");
        for v in f {
            out.push(',');
            out.push_str(&format_float(*v));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn save_features(samples: &[PairedSample], path: &Path) -> Result<()> {
    let dim = samples.first().map(|s| s.x_a.len()).unwrap_or(0);
    write_features_csv(
        path,
        dim,
        samples.iter().flat_map(|s| {
            Modality::ALL
                .into_iter()
                .map(move |m| (s.id, s.label, m, s.features(m)))
        }),
    )
}

/// Parses a feature CSV. Every id must appear once per modality with the same
/// label. When `classes` is given, labels must be below it.
pub fn load_features(path: &Path, classes: Option<usize>) -> Result<Vec<PairedSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&text, &path.display().to_string(), classes)
}

pub(crate) fn parse_features(
    text: &str,
    origin: &str,
    classes: Option<usize>,
) -> Result<Vec<PairedSample>> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, head) = lines
        .next()
        .ok_or_else(|| err(1, "empty file, expected a header".into()))?;
    let cols: Vec<&str> = head.trim_end_matches('\r').split(',').collect();
    if cols.len() < 4 || cols[..3] != ["id", "label", "m"] {
        return Err(err(1, "header must start with `id,label,m,f0`".into()));
    }
    let dim = cols.len() - 3;
    for (j, c) in cols[3..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(err(1, format!("expected column `f{j}`, found `{c}`")));
        }
    }

    // id -> (label, first line, a, b)
    type Partial = (usize, usize, Option<Vec<f64>>, Option<Vec<f64>>);
    let mut by_id: BTreeMap<u64, Partial> = BTreeMap::new();
    let mut order: Vec<u64> = Vec::new();
    for (i, raw) in lines {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(err(
                lineno,
                format!("expected {} fields, found {}", dim + 3, fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| err(lineno, format!("bad id `{}`", fields[0])))?;
        let label: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| err(lineno, format!("bad label `{}`", fields[1])))?;
        if let Some(c) = classes {
            if label >= c {
                return Err(err(
                    lineno,
                    format!("label {label} out of range for {c} classes"),
                ));
            }
        }
        let m: Modality = fields[2].parse().map_err(|e: String| err(lineno, e))?;
        let mut values = Vec::with_capacity(dim);
        for (j, f) in fields[3..].iter().enumerate() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| err(lineno, format!("bad value `{f}` in column f{j}")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite value in column f{j}")));
            }
            values.push(v);
        }
        let entry = by_id.entry(id).or_insert_with(|| {
            order.push(id);
            (label, lineno, None, None)
        });
        if entry.0 != label {
            return Err(err(
                lineno,
                format!(
                    "id {id} has label {label} here but {} on line {}",
                    entry.0, entry.1
                ),
            ));
        }
        let slot = match m {
            Modality::A => &mut entry.2,
            Modality::B => &mut entry.3,
        };
        if slot.is_some() {
            return Err(err(
                lineno,
                format!("duplicate row for id {id}, modality {m}"),
            ));
        }
        *slot = Some(values);
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let (label, line, a, b) = by_id.remove(&id).expect("id recorded");
        match (a, b) {
            (Some(x_a), Some(x_b)) => out.push(PairedSample {
                id,
                label,
                x_a,
                x_b,
            }),
            (a, _) => {
                let missing = if a.is_none() { "a" } else { "b" };
                return Err(err(
                    line,
                    format!("id {id} has no row for modality {missing}"),
                ));
            }
        }
    }
    Ok(out)
}
