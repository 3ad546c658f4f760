//! JSON and plain-text rendering of evaluation reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalReport, SizeBucket, TaskReports, REPORT_SCHEMA_VERSION};
use crate::error::Result;
use crate::task::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub reports: Vec<EvalReport>,
}

pub fn emit_report(reports: &[EvalReport], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let doc = ReportDocument {
                schema_version: REPORT_SCHEMA_VERSION,
                reports: reports.to_vec(),
            };
            let mut s = serde_json::to_string_pretty(&doc)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Text => Ok(render_text(reports)),
    }
}

const CLASS_COLUMNS: [(Task, &str); 4] = [
    (Task::Subtlety, "Subtlety"),
    (Task::State, "State"),
    (Task::Diagnosis, "Diagnosis"),
    (Task::Z, "Location(Z)"),
];

// the size table orders its columns differently
const SIZE_CLASS_COLUMNS: [(Task, &str); 4] = [
    (Task::Subtlety, "subtlety"),
    (Task::State, "State"),
    (Task::Z, "Location(Z)"),
    (Task::Diagnosis, "Diagnosis"),
];

const REG_COLUMNS: [(Task, &str); 3] = [(Task::X, "x"), (Task::Y, "y"), (Task::Size, "Nodule Size")];

const LABEL_W: usize = 16;
const PAIR_W: usize = 18;
const REG_PAIR_W: usize = 24;

fn render_text(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    if reports.is_empty() {
        out.push_str("(no reports)\n");
        return out;
    }
    for (k, r) in reports.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let scheme = match r.f1_scheme {
            super::F1Scheme::Macro => "macro",
            super::F1Scheme::Micro => "micro",
        };
        let _ = writeln!(out, "# {} ({} samples, {scheme} F1)", r.name, r.samples);
        out.push_str("\nClassification performance\n");
        class_table(&mut out, "model", &CLASS_COLUMNS, &[(r.name.as_str(), Some(&r.tasks))]);
        out.push_str("\nRegression performance (normalized units)\n");
        reg_table(&mut out, "model", &[(r.name.as_str(), Some(&r.tasks))], false);
        out.push_str("\nRegression performance (raw units: x, y in px; size in mm)\n");
        reg_table(&mut out, "model", &[(r.name.as_str(), Some(&r.tasks))], true);
        if let Some(s) = &r.stratified {
            let rows: Vec<(&str, Option<&TaskReports>)> = SizeBucket::ALL
                .iter()
                .map(|&b| (b.label(), s.bucket(b).map(|x| &x.tasks)))
                .collect();
            out.push_str("\nClassification performance by nodule size\n");
            class_table(&mut out, "Size range(mm)", &SIZE_CLASS_COLUMNS, &rows);
            out.push_str("\nRegression performance by nodule size (normalized units)\n");
            reg_table(&mut out, "Size range(mm)", &rows, false);
            let counts = s.counts();
            let _ = writeln!(
                out,
                "\nbucket samples: {}",
                SizeBucket::ALL
                    .iter()
                    .zip(counts)
                    .map(|(b, n)| format!("{} {n}", b.label()))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
    }
    out
}

fn pad(s: &str, w: usize) -> String {
    let len = s.chars().count();
    if len >= w {
        format!("{s} ")
    } else {
        format!("{s}{}", " ".repeat(w - len))
    }
}

fn class_table(out: &mut String, corner: &str, columns: &[(Task, &str)], rows: &[(&str, Option<&TaskReports>)]) {
    let mut head = pad(corner, LABEL_W);
    let mut sub = pad("", LABEL_W);
    for (_, title) in columns {
        head.push_str(&pad(title, PAIR_W));
        sub.push_str(&pad("Acc", PAIR_W / 2));
        sub.push_str(&pad("F1", PAIR_W / 2));
    }
    let _ = writeln!(out, "{}", head.trim_end());
    let _ = writeln!(out, "{}", sub.trim_end());
    for (label, tasks) in rows {
        let mut line = pad(label, LABEL_W);
        for (t, _) in columns {
            match tasks.and_then(|r| r.classification(*t)) {
                Some(c) => {
                    line.push_str(&pad(&format!("{:.3}", c.accuracy), PAIR_W / 2));
                    line.push_str(&pad(&format!("{:.3}", c.f1), PAIR_W / 2));
                }
                None => {
                    line.push_str(&pad("-", PAIR_W / 2));
                    line.push_str(&pad("-", PAIR_W / 2));
                }
            }
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
}

fn reg_table(out: &mut String, corner: &str, rows: &[(&str, Option<&TaskReports>)], raw: bool) {
    let mut head = pad(corner, LABEL_W);
    let mut sub = pad("", LABEL_W);
    for (_, title) in REG_COLUMNS {
        head.push_str(&pad(title, REG_PAIR_W));
        sub.push_str(&pad("MSE", REG_PAIR_W / 2));
        sub.push_str(&pad("MAE", REG_PAIR_W / 2));
    }
    let _ = writeln!(out, "{}", head.trim_end());
    let _ = writeln!(out, "{}", sub.trim_end());
    for (label, tasks) in rows {
        let mut line = pad(label, LABEL_W);
        for (t, _) in REG_COLUMNS {
            match tasks.and_then(|r| r.regression(t)) {
                Some(r) => {
                    let m = if raw { r.raw } else { r.normalized };
                    line.push_str(&pad(&format!("{:.6}", m.mse), REG_PAIR_W / 2));
                    line.push_str(&pad(&format!("{:.6}", m.mae), REG_PAIR_W / 2));
                }
                None => {
                    line.push_str(&pad("-", REG_PAIR_W / 2));
                    line.push_str(&pad("-", REG_PAIR_W / 2));
                }
            }
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
}
