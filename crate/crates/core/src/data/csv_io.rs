//! Feature CSV format.
//!
//! ```text
//! id,f0,...,f{D-1},subtlety,state,z,diagnosis,x_px,y_px,size_mm
//! ```
//!
//! UTF-8, `.` as decimal separator, an empty cell is a missing value. Lines
//! starting with `#` are comments. Feature cells use Rust's shortest
//! round-trip rendering of `f64`, so save→load is bit-exact.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::{Dataset, LabelVocab, NormalizationSpec, SampleRecord};
use crate::error::{Error, Result};
use crate::task::Task;

const LABEL_COLUMNS: [&str; 7] = ["subtlety", "state", "z", "diagnosis", "x_px", "y_px", "size_mm"];

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Map labels through an existing vocab instead of building one; unknown
    /// labels are then an error.
    pub vocab: Option<LabelVocab>,
    pub norm: NormalizationSpec,
}

struct RawRow {
    line: u64,
    id: String,
    features: Vec<f64>,
    labels: [Option<String>; 4],
    values: [Option<f64>; 3],
}

pub fn load_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(file);

    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let header = reader.headers()?.clone();
    let header_line = reader.position().line();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.first() != Some(&"id") {
        return Err(parse_err(header_line, "header must start with `id`".into()));
    }
    let feature_dim = cols.len().saturating_sub(1 + LABEL_COLUMNS.len());
    for (i, name) in cols[1..1 + feature_dim].iter().enumerate() {
        if *name != format!("f{i}") {
            return Err(parse_err(header_line, format!("expected column `f{i}`, found `{name}`")));
        }
    }
    if cols[1 + feature_dim..] != LABEL_COLUMNS {
        return Err(parse_err(
            header_line,
            format!("header must end with {}", LABEL_COLUMNS.join(",")),
        ));
    }

    let mut rows = Vec::new();
    for result in reader.records() {
        let rec = result?;
        let line = rec.position().map_or(0, |p| p.line());
        let expected = 1 + feature_dim + LABEL_COLUMNS.len();
        if rec.len() != expected {
            let found = rec.len().saturating_sub(1 + LABEL_COLUMNS.len());
            return Err(parse_err(
                line,
                format!("inconsistent feature width: expected {feature_dim} features, found {found}"),
            ));
        }
        let cell = |i: usize| rec.get(i).unwrap_or("").trim();
        let features = (0..feature_dim)
            .map(|j| {
                let s = cell(1 + j);
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("feature f{j}: `{s}` is not a finite number")))
            })
            .collect::<Result<Vec<_>>>()?;
        let base = 1 + feature_dim;
        let labels = std::array::from_fn(|k| Some(cell(base + k)).filter(|s| !s.is_empty()).map(str::to_owned));
        let mut values = [None; 3];
        for (k, slot) in values.iter_mut().enumerate() {
            let s = cell(base + 4 + k);
            if s.is_empty() {
                continue;
            }
            let v = s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("{}: `{s}` is not a finite number", LABEL_COLUMNS[4 + k])))?;
            if k == 2 && v <= 0.0 {
                return Err(parse_err(line, format!("size_mm must be positive, found {v}")));
            }
            *slot = Some(v);
        }
        rows.push(RawRow {
            line,
            id: cell(0).to_owned(),
            features,
            labels,
            values,
        });
    }

    let vocab = match &options.vocab {
        Some(v) => v.clone(),
        None => LabelVocab::from_observed(|t| {
            rows.iter()
                .filter_map(|r| r.labels[t.index()].as_deref())
                .collect()
        }),
    };

    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        if row.id.is_empty() {
            return Err(parse_err(row.line, "empty id".into()));
        }
        if !seen.insert(row.id.clone()) {
            warnings.push(format!("line {}: duplicate id `{}`", row.line, row.id));
        }
        if row.values[0].is_some() != row.values[1].is_some() {
            warnings.push(format!("line {}: only one of x_px/y_px is present", row.line));
        }
        let mut classes = [None; 4];
        for t in Task::CLASSIFICATION {
            if let Some(label) = &row.labels[t.index()] {
                let idx = vocab.index_of(t, label).ok_or_else(|| {
                    Error::Incompatible(format!(
                        "{}: line {}: `{t}` label `{label}` is not in the model vocabulary",
                        path.display(),
                        row.line
                    ))
                })?;
                classes[t.index()] = Some(idx);
            }
        }
        records.push(SampleRecord {
            id: row.id,
            features: row.features,
            subtlety: classes[0],
            state: classes[1],
            z: classes[2],
            diagnosis: classes[3],
            x_px: row.values[0],
            y_px: row.values[1],
            size_mm: row.values[2],
            normalized: [None; 3],
        });
    }

    let mut ds = Dataset::new(records, vocab, options.norm, feature_dim)?;
    ds.warnings = warnings;
    Ok(ds)
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, file)?;
    Ok(())
}

pub fn write_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let mut header = vec!["id".to_owned()];
    header.extend((0..ds.feature_dim).map(|i| format!("f{i}")));
    header.extend(LABEL_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;

    let num = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in &ds.records {
        let mut row = Vec::with_capacity(header.len());
        row.push(r.id.clone());
        row.extend(r.features.iter().map(|v| v.to_string()));
        for t in Task::CLASSIFICATION {
            let label = r
                .class(t)
                .and_then(|c| ds.vocab.label(t, c))
                .unwrap_or_default();
            row.push(label.to_owned());
        }
        for t in Task::REGRESSION {
            row.push(num(r.raw_value(t)));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}
