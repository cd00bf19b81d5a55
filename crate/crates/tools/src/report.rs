//! Evaluation report as a text table and as CSV records.

use std::fmt::Write as _;
use std::path::Path;

use mitosis_core::evaluation::{EvaluationReport, ScoreRow};
use serde::Serialize;

use crate::{Error, Result};

#[derive(Debug, Serialize)]
struct Row<'a> {
    slide_id: &'a str,
    #[serde(rename = "TP")]
    tp: usize,
    #[serde(rename = "FP")]
    fp: usize,
    #[serde(rename = "FN")]
    fn_: usize,
    #[serde(rename = "P")]
    p: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "F1")]
    f1: f64,
}

impl<'a> From<&'a ScoreRow> for Row<'a> {
    fn from(s: &'a ScoreRow) -> Self {
        Row {
            slide_id: &s.slide_id,
            tp: s.counts.true_positives,
            fp: s.counts.false_positives,
            fn_: s.counts.false_negatives,
            p: s.prf.precision,
            r: s.prf.recall,
            f1: s.prf.f1,
        }
    }
}

fn rows(report: &EvaluationReport, per_slide: bool) -> Vec<&ScoreRow> {
    let mut v: Vec<&ScoreRow> = if per_slide { report.per_slide.iter().collect() } else { Vec::new() };
    v.push(&report.aggregate);
    v
}

pub fn format_table(report: &EvaluationReport, per_slide: bool) -> String {
    let all = rows(report, per_slide);
    let w = all.iter().map(|r| r.slide_id.len()).max().unwrap_or(0).max(8);
    let mut s = String::new();
    let _ = writeln!(s, "match radius {} px", report.radius);
    let _ = writeln!(s, "{:<w$} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7}", "slide_id", "TP", "FP", "FN", "P", "R", "F1");
    for (i, r) in all.iter().enumerate() {
        if i + 1 == all.len() && all.len() > 1 {
            let _ = writeln!(s, "{}", "-".repeat(w + 45));
        }
        let c = &r.counts;
        let _ = writeln!(
            s,
            "{:<w$} {:>6} {:>6} {:>6} {:>7.4} {:>7.4} {:>7.4}",
            r.slide_id, c.true_positives, c.false_positives, c.false_negatives, r.prf.precision, r.prf.recall, r.prf.f1
        );
    }
    s
}

pub fn write_report_csv(path: &Path, report: &EvaluationReport, per_slide: bool) -> Result<()> {
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows(report, per_slide) {
        w.serialize(Row::from(r)).map_err(err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
