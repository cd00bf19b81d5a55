//! Dataset-level training and inference steps shared by the command line
//! and the integration tests.

use std::collections::BTreeMap;
use std::path::Path;

use mitosis_core::checkpoint::Stage;
use mitosis_core::classification::{augment_offline, crops_from_annotations, ClassifierModel, LabeledCrop};
use mitosis_core::data::Annotation;
use mitosis_core::detection::DetectorModel;
use mitosis_core::evaluation::{evaluate_dataset, EvalConfig, EvaluationReport};
use mitosis_core::pipeline::{run_slide_cached, translate_slide, Clock, Models, PipelineConfig, SlideResult, StageCache};
use mitosis_core::split::SplitSpec;
use mitosis_core::tiling::{build_grid, tissue_fraction, TissueConfig};
use mitosis_core::translation::TranslationModel;
use mitosis_core::{rng, BoundingBox, Point, Raster};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint_io::load_checkpoint;
use crate::manifest::ManifestFile;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

/// Slide ids of a split partition, or every annotated-scanner slide when no
/// split is given.
pub fn select_slides(mf: &ManifestFile, split: Option<&SplitSpec>, partition: Partition) -> Vec<String> {
    match split {
        Some(s) => match partition {
            Partition::Train => s.train_ids.clone(),
            Partition::Val => s.val_ids.clone(),
            Partition::Test => s.test_ids.clone(),
        },
        None => annotated_slides(mf),
    }
}

pub fn annotated_slides(mf: &ManifestFile) -> Vec<String> {
    mf.manifest
        .slides
        .iter()
        .filter(|s| !s.scanner.is_reference())
        .map(|s| s.slide_id.clone())
        .collect()
}

pub fn reference_slides(mf: &ManifestFile) -> Vec<String> {
    mf.manifest
        .slides
        .iter()
        .filter(|s| s.scanner.is_reference())
        .map(|s| s.slide_id.clone())
        .collect()
}

/// Up to `n` random `size` windows of an image with enough tissue. Windows
/// larger than the image are centered and mirror-padded.
pub fn sample_patches(image: &Raster, size: usize, n: usize, tissue: &TissueConfig, seed: u64) -> Vec<Raster> {
    let mut rng = rng::seeded(seed);
    let span = |extent: usize, rng: &mut rand_chacha::ChaCha8Rng| -> i64 {
        if extent >= size {
            rng.random_range(0..=(extent - size) as i64)
        } else {
            -(((size - extent) / 2) as i64)
        }
    };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n * 10 {
        if out.len() == n {
            break;
        }
        let x = span(image.width(), &mut rng);
        let y = span(image.height(), &mut rng);
        let p = image.crop_reflect(x, y, size, size);
        if tissue_fraction(&p, tissue.background_threshold) >= tissue.min_tissue_fraction {
            out.push(p);
        }
    }
    out
}

/// Unpaired translation training data: domain A from the given
/// annotated-scanner slides, domain B from every reference-scanner slide.
pub fn translation_patches(
    mf: &ManifestFile,
    domain_a_ids: &[String],
    cfg: &PipelineConfig,
    per_slide: usize,
) -> Result<(Vec<Raster>, Vec<Raster>)> {
    let size = cfg.translation.patch_size;
    let collect = |ids: &[String], salt: u64| -> Result<Vec<Raster>> {
        let mut out = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            let img = mf.load_image(id)?;
            let seed = cfg.translation.seed ^ (salt << 32) ^ i as u64;
            out.extend(sample_patches(&img, size, per_slide, &cfg.tiling.tissue, seed));
        }
        Ok(out)
    };
    let a = collect(domain_a_ids, 1)?;
    let b = collect(&reference_slides(mf), 2)?;
    Ok((a, b))
}

/// The slide in the reference domain, or unchanged without a model.
pub fn prepare_image(mf: &ManifestFile, id: &str, translation: Option<&TranslationModel>, cfg: &PipelineConfig) -> Result<Raster> {
    let img = mf.load_image(id)?;
    match translation {
        Some(m) => Ok(translate_slide(&img, Some(m), cfg)?.0),
        None => Ok(img),
    }
}

/// Detection tiles over a whole slide. A box belongs to a tile when its
/// center lies inside; it is clipped to the tile. Tiles without tissue and
/// without boxes are skipped.
pub fn detection_tiles_for_slide(
    image: &Raster,
    annotations: &[&Annotation],
    tile: usize,
    stride: usize,
    tissue: &TissueConfig,
) -> Result<Vec<(Raster, Vec<BoundingBox>)>> {
    let grid = build_grid(image.width(), image.height(), tile, stride)?;
    let mut out = Vec::new();
    for spec in &grid.tiles {
        let pixels = image.crop_reflect(spec.x, spec.y, tile, tile);
        let (ox, oy) = (spec.x as f64, spec.y as f64);
        let boxes: Vec<BoundingBox> = annotations
            .iter()
            .filter(|a| {
                let c = a.bbox.center();
                c.x >= ox && c.y >= oy && c.x < ox + tile as f64 && c.y < oy + tile as f64
            })
            .filter_map(|a| a.bbox.translate(-ox, -oy).clip(tile as f64, tile as f64))
            .collect();
        if boxes.is_empty() && tissue_fraction(&pixels, tissue.background_threshold) < tissue.min_tissue_fraction {
            continue;
        }
        out.push((pixels, boxes));
    }
    Ok(out)
}

pub fn detector_training_set(
    mf: &ManifestFile,
    ids: &[String],
    translation: Option<&TranslationModel>,
    cfg: &PipelineConfig,
) -> Result<Vec<(Raster, Vec<BoundingBox>)>> {
    let mut out = Vec::new();
    for id in ids {
        let img = prepare_image(mf, id, translation, cfg)?;
        let ann: Vec<&Annotation> = mf.manifest.annotations_for(id).collect();
        out.extend(detection_tiles_for_slide(
            &img,
            &ann,
            cfg.detector.tile_size,
            cfg.tiling.detection_stride,
            &cfg.tiling.tissue,
        )?);
    }
    Ok(out)
}

/// Crops at every annotation of the given slides; with `offline_rotations`
/// set, each crop is expanded by offline augmentation.
pub fn classifier_crops(
    mf: &ManifestFile,
    ids: &[String],
    translation: Option<&TranslationModel>,
    cfg: &PipelineConfig,
    augment: bool,
) -> Result<Vec<LabeledCrop>> {
    let mut out = Vec::new();
    for id in ids {
        let img = prepare_image(mf, id, translation, cfg)?;
        let ann: Vec<&Annotation> = mf.manifest.annotations_for(id).collect();
        for (k, c) in crops_from_annotations(&img, &ann, cfg.classifier.crop_size)?.into_iter().enumerate() {
            if augment {
                let seed = cfg.classifier.seed ^ ((out.len() as u64) << 20) ^ k as u64;
                out.extend(augment_offline(&c, cfg.classifier.offline_rotations, seed));
            } else {
                out.push(c);
            }
        }
    }
    Ok(out)
}

pub fn load_models(translation: Option<&Path>, detector: &Path, classifier: &Path) -> Result<Models> {
    fn core(path: &Path) -> impl Fn(mitosis_core::Error) -> Error + '_ {
        move |source| Error::Core {
            path: path.to_path_buf(),
            source,
        }
    }
    let translation = match translation {
        Some(p) => Some(TranslationModel::from_checkpoint(&load_checkpoint(p, Stage::Translation)?).map_err(core(p))?),
        None => None,
    };
    let detector_model = DetectorModel::from_checkpoint(&load_checkpoint(detector, Stage::Detector)?).map_err(core(detector))?;
    let classifier_model = ClassifierModel::from_checkpoint(&load_checkpoint(classifier, Stage::Classifier)?).map_err(core(classifier))?;
    Ok(Models {
        translation,
        detector: detector_model,
        classifier: classifier_model,
    })
}

/// Gating thresholds that differ between the checkpoints and the config in
/// use. Inference always applies the config values.
pub fn threshold_mismatches(models: &Models, cfg: &PipelineConfig) -> Vec<String> {
    let d = &models.detector.config;
    let checks = [
        ("detector score_threshold", d.score_threshold, cfg.detector.score_threshold),
        ("detector nms_iou", d.nms_iou, cfg.detector.nms_iou),
        ("classifier confidence_threshold", models.classifier.config.confidence_threshold, cfg.classifier.confidence_threshold),
    ];
    checks
        .into_iter()
        .filter(|(_, trained, used)| trained != used)
        .map(|(name, trained, used)| format!("{name} is {used} but the checkpoint was trained with {trained}"))
        .collect()
}

pub fn run_slides(mf: &ManifestFile, ids: &[String], models: &Models, cfg: &PipelineConfig, clock: &dyn Clock) -> Result<Vec<SlideResult>> {
    let mut cache = StageCache::new();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let img = mf.load_image(id)?;
        out.push(run_slide_cached(id, &img, models, cfg, clock, &mut cache).map_err(|e| Error::Invalid(format!("slide {id}: {e}")))?);
    }
    Ok(out)
}

/// Mitosis annotation centers per slide.
pub fn truth_points(mf: &ManifestFile, ids: &[String]) -> BTreeMap<String, Vec<Point>> {
    ids.iter()
        .map(|id| {
            let pts = mf
                .manifest
                .annotations_for(id)
                .filter(|a| a.label == mitosis_core::data::Label::Mitosis)
                .map(|a| a.bbox.center())
                .collect();
            (id.clone(), pts)
        })
        .collect()
}

pub fn evaluate_points(
    mf: &ManifestFile,
    ids: &[String],
    detections: &BTreeMap<String, Vec<(Point, f64)>>,
    cfg: &EvalConfig,
) -> Result<EvaluationReport> {
    Ok(evaluate_dataset(detections, &truth_points(mf, ids), cfg)?)
}
