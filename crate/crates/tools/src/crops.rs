//! Crop datasets on disk: one PNG per crop plus an `index.csv` with
//! `path,label,slide_id,x,y` records.

use std::fs;
use std::path::Path;

use mitosis_core::classification::{CropLabel, LabeledCrop};
use mitosis_core::Point;
use serde::{Deserialize, Serialize};

use crate::image_io::{load_raster, save_png};
use crate::{io_err, Error, Result};

pub const INDEX_FILE: &str = "index.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRecord {
    pub path: String,
    pub label: CropLabel,
    pub slide_id: String,
    pub x: f64,
    pub y: f64,
}

pub fn write_crop_dataset(dir: &Path, crops: &[LabeledCrop]) -> Result<Vec<CropRecord>> {
    let img_dir = dir.join("crops");
    fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    let mut index = Vec::with_capacity(crops.len());
    for (i, c) in crops.iter().enumerate() {
        let rel = format!("crops/{i:06}.png");
        save_png(&dir.join(&rel), &c.pixels)?;
        index.push(CropRecord {
            path: rel,
            label: c.label,
            slide_id: c.slide_id.clone(),
            x: c.center.x,
            y: c.center.y,
        });
    }
    let path = dir.join(INDEX_FILE);
    let err = |source| Error::Csv {
        path: path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    for r in &index {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(index)
}

pub fn read_crop_dataset(dir: &Path) -> Result<Vec<LabeledCrop>> {
    let path = dir.join(INDEX_FILE);
    let err = |source| Error::Csv {
        path: path.clone(),
        source,
    };
    let mut r = csv::Reader::from_path(&path).map_err(err)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let rec: CropRecord = rec.map_err(err)?;
        out.push(LabeledCrop {
            pixels: load_raster(&dir.join(&rec.path))?,
            label: rec.label,
            slide_id: rec.slide_id,
            center: Point::new(rec.x, rec.y),
        });
    }
    Ok(out)
}
