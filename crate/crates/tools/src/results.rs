//! Per-mitosis result records as CSV with header `slide_id,x,y,prob`.

use std::collections::BTreeMap;
use std::path::Path;

use mitosis_core::pipeline::{result_order, SlideResult};
use mitosis_core::Point;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub slide_id: String,
    pub x: f64,
    pub y: f64,
    pub prob: f64,
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Records in slide order, each slide in descending probability, then x,
/// then y. An empty result set yields a header-only file.
pub fn records(results: &[SlideResult]) -> Vec<ResultRecord> {
    let mut out = Vec::new();
    for r in results {
        let mut m = r.mitoses.clone();
        m.sort_by(result_order);
        out.extend(m.into_iter().map(|(p, prob)| ResultRecord {
            slide_id: r.slide_id.clone(),
            x: p.x,
            y: p.y,
            prob,
        }));
    }
    out
}

pub fn write_records(path: &Path, recs: &[ResultRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err(path))?;
    w.write_record(["slide_id", "x", "y", "prob"]).map_err(csv_err(path))?;
    for r in recs {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_results(path: &Path, results: &[SlideResult]) -> Result<()> {
    write_records(path, &records(results))
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["slide_id", "x", "y", "prob"] {
        return Err(Error::Invalid(format!("{}: expected header slide_id,x,y,prob", path.display())));
    }
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

/// Records grouped per slide as scored points.
pub fn group_by_slide(recs: &[ResultRecord]) -> BTreeMap<String, Vec<(Point, f64)>> {
    let mut out: BTreeMap<String, Vec<(Point, f64)>> = BTreeMap::new();
    for r in recs {
        out.entry(r.slide_id.clone()).or_default().push((Point::new(r.x, r.y), r.prob));
    }
    out
}
