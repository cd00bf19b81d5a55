//! Slide-level inference: tile, translate, detect, merge, classify.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classification::{decide, classify, make_crop, ClassifierConfig, ClassifierModel};
use crate::detection::{detect, DetectorConfig, DetectorModel};
use crate::error::{Error, Result};
use crate::geometry::{nms, Detection, Point};
use crate::raster::Raster;
use crate::tiling::{build_grid, embed_tile, extract_tile, tissue_fraction, TileSpec, TissueConfig};
use crate::translation::{translate, TranslationConfig, TranslationModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingConfig {
    /// Stride of the translation-patch grid; the patch side is
    /// `translation.patch_size`.
    pub translation_stride: usize,
    /// Stride of the slide-wide detection-tile grid.
    pub detection_stride: usize,
    pub tissue: TissueConfig,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            translation_stride: 1024,
            detection_stride: 448,
            tissue: TissueConfig::default(),
        }
    }
}

/// Inference settings. Architecture-bound sizes (detection tile, crop and
/// network input) come from the loaded models; thresholds, strides and the
/// translation patch size come from here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub translation: TranslationConfig,
    pub detector: DetectorConfig,
    pub classifier: ClassifierConfig,
    pub tiling: TilingConfig,
    pub merge_nms_iou: f64,
    /// Take classification crops from translated pixels rather than the
    /// original slide.
    pub crops_from_translated: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            translation: TranslationConfig::default(),
            detector: DetectorConfig::default(),
            classifier: ClassifierConfig::default(),
            tiling: TilingConfig::default(),
            merge_nms_iou: 0.1,
            crops_from_translated: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.translation.validate()?;
        self.detector.validate()?;
        self.classifier.validate()?;
        if !(0.0..=1.0).contains(&self.merge_nms_iou) {
            return Err(Error::config("merge_nms_iou must lie in [0, 1]"));
        }
        if self.tiling.translation_stride == 0 || self.tiling.detection_stride == 0 {
            return Err(Error::config("tiling strides must be positive"));
        }
        Ok(())
    }
}

/// Trained stages; no translation model means the identity map.
#[derive(Debug, Clone)]
pub struct Models {
    pub translation: Option<TranslationModel>,
    pub detector: DetectorModel,
    pub classifier: ClassifierModel,
}

/// Monotonic time source in nanoseconds.
pub trait Clock {
    fn now_ns(&self) -> u64;
}

/// Clock that never advances; timings come out as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ns(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub translation_s: f64,
    pub detection_s: f64,
    pub classification_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideResult {
    pub slide_id: String,
    /// Slide-frame centers with mitosis probability, in [`result_order`].
    pub mitoses: Vec<(Point, f64)>,
    /// Candidates surviving the cross-tile merge.
    pub candidates_total: usize,
    pub patches_total: usize,
    pub patches_with_tissue: usize,
    pub timings: StageTimings,
}

/// Descending probability, then ascending x, then ascending y.
pub fn result_order(a: &(Point, f64), b: &(Point, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| a.0.x.total_cmp(&b.0.x))
        .then_with(|| a.0.y.total_cmp(&b.0.y))
}

#[derive(Debug, Clone, PartialEq)]
struct Translated {
    canvas: Raster,
    patches: Vec<TileSpec>,
    patches_total: usize,
}

type Key = [u8; 32];

/// Per-slide stage outputs keyed by a hash of everything they depend on,
/// so a re-run with one changed stage recomputes only that stage and the
/// ones after it.
#[derive(Debug, Default)]
pub struct StageCache {
    translated: BTreeMap<Key, Translated>,
    candidates: BTreeMap<Key, Vec<Detection>>,
    results: BTreeMap<Key, Vec<(Point, f64)>>,
    /// Stage computations performed, per stage name.
    pub computed: BTreeMap<&'static str, usize>,
}

impl StageCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn count(&mut self, stage: &'static str) {
        *self.computed.entry(stage).or_default() += 1;
    }
}

fn feed_f64s(h: &mut Sha256, v: &[f64]) {
    h.update((v.len() as u64).to_le_bytes());
    for x in v {
        h.update(x.to_le_bytes());
    }
}

fn feed_json<T: Serialize>(h: &mut Sha256, v: &T) {
    let s = serde_json::to_string(v).expect("plain data serializes");
    h.update((s.len() as u64).to_le_bytes());
    h.update(s.as_bytes());
}

fn translation_key(image: &Raster, models: &Models, cfg: &PipelineConfig) -> Key {
    let mut h = Sha256::new();
    h.update(b"translation");
    h.update((image.width() as u64).to_le_bytes());
    h.update((image.height() as u64).to_le_bytes());
    for v in image.data() {
        h.update(v.to_le_bytes());
    }
    feed_json(&mut h, &(cfg.translation.patch_size, &cfg.tiling.translation_stride, &cfg.tiling.tissue));
    match &models.translation {
        Some(m) => {
            feed_json(&mut h, &m.config);
            feed_f64s(&mut h, &m.g_ab.params);
        }
        None => h.update(b"identity"),
    }
    h.finalize().into()
}

fn detection_key(prev: &Key, models: &Models, cfg: &PipelineConfig) -> Key {
    let mut h = Sha256::new();
    h.update(b"detection");
    h.update(prev);
    feed_json(&mut h, &models.detector.config);
    feed_f64s(&mut h, &models.detector.params);
    let d = &cfg.detector;
    feed_json(&mut h, &(d.score_threshold, d.nms_iou, d.max_candidates, cfg.tiling.detection_stride, cfg.merge_nms_iou));
    h.finalize().into()
}

fn classification_key(prev: &Key, models: &Models, cfg: &PipelineConfig) -> Key {
    let mut h = Sha256::new();
    h.update(b"classification");
    h.update(prev);
    feed_json(&mut h, &models.classifier.config);
    feed_f64s(&mut h, &models.classifier.params);
    feed_json(&mut h, &(cfg.classifier.confidence_threshold, cfg.crops_from_translated));
    h.finalize().into()
}

/// Grid the slide into translation patches, translate those with enough
/// tissue and paste them over a copy of the slide.
pub fn translate_slide(image: &Raster, model: Option<&TranslationModel>, cfg: &PipelineConfig) -> Result<(Raster, Vec<TileSpec>, usize)> {
    let grid = build_grid(image.width(), image.height(), cfg.translation.patch_size, cfg.tiling.translation_stride)?;
    let mut canvas = image.clone();
    let mut kept = Vec::new();
    for spec in &grid.tiles {
        let patch = extract_tile(image, spec)?;
        if tissue_fraction(&patch, cfg.tiling.tissue.background_threshold) < cfg.tiling.tissue.min_tissue_fraction {
            continue;
        }
        if let Some(m) = model {
            let out = translate(&patch, m)?;
            embed_tile(&mut canvas, &out, spec)?;
        }
        kept.push(*spec);
    }
    Ok((canvas, kept, grid.tiles.len()))
}

/// Detect on the slide-wide grid of detection tiles that overlap a tissue
/// patch, map to the slide frame, merge across tiles and drop centers
/// outside the slide.
///
/// The grid spans patch boundaries so objects on a patch seam are seen
/// whole by some tile.
pub fn detect_slide(canvas: &Raster, patches: &[TileSpec], detector: &DetectorModel, cfg: &PipelineConfig) -> Result<Vec<Detection>> {
    let tile = detector.config.tile_size;
    let (w, h) = (canvas.width() as f64, canvas.height() as f64);
    let grid = build_grid(canvas.width(), canvas.height(), tile, cfg.tiling.detection_stride)?;
    let overlaps = |a: &TileSpec, b: &TileSpec| {
        a.x < b.x + b.size as i64 && b.x < a.x + a.size as i64 && a.y < b.y + b.size as i64 && b.y < a.y + a.size as i64
    };
    let mut all = Vec::new();
    for spec in grid.tiles.iter().filter(|t| patches.iter().any(|p| overlaps(t, p))) {
        let pixels = canvas.crop_reflect(spec.x, spec.y, spec.size, spec.size);
        let t = spec.transform();
        for d in detect(&pixels, detector, &cfg.detector)? {
            all.push(Detection::new(d.bbox.to_slide(&t), d.score, d.class_id));
        }
    }
    let merged = nms(&all, cfg.merge_nms_iou);
    Ok(merged
        .into_iter()
        .filter(|d| {
            let c = d.bbox.center();
            c.x >= 0.0 && c.y >= 0.0 && c.x < w && c.y < h
        })
        .collect())
}

/// Classify a crop at each candidate center and keep confident mitoses.
pub fn classify_candidates(source: &Raster, candidates: &[Detection], classifier: &ClassifierModel, cfg: &PipelineConfig) -> Result<Vec<(Point, f64)>> {
    let mut out = Vec::new();
    for d in candidates {
        let c = d.bbox.center();
        let crop = make_crop(source, c, classifier.config.crop_size)?;
        let (p, _) = classify(&crop, classifier)?;
        if decide(p, cfg.classifier.confidence_threshold) {
            out.push((c, p));
        }
    }
    out.sort_by(result_order);
    Ok(out)
}

pub fn run_slide(slide_id: &str, image: &Raster, models: &Models, cfg: &PipelineConfig, clock: &dyn Clock) -> Result<SlideResult> {
    run_slide_cached(slide_id, image, models, cfg, clock, &mut StageCache::new())
}

pub fn run_slide_cached(
    slide_id: &str,
    image: &Raster,
    models: &Models,
    cfg: &PipelineConfig,
    clock: &dyn Clock,
    cache: &mut StageCache,
) -> Result<SlideResult> {
    cfg.validate()?;
    if image.is_empty() {
        return Err(Error::Empty("slide image"));
    }
    let secs = |a: u64, b: u64| b.saturating_sub(a) as f64 * 1e-9;
    let mut timings = StageTimings::default();

    let t0 = clock.now_ns();
    let tk = translation_key(image, models, cfg);
    if !cache.translated.contains_key(&tk) {
        let (canvas, patches, patches_total) =
            translate_slide(image, models.translation.as_ref(), cfg).map_err(|e| e.in_stage("translation"))?;
        cache.translated.insert(
            tk,
            Translated {
                canvas,
                patches,
                patches_total,
            },
        );
        cache.count("translation");
    }
    let t1 = clock.now_ns();
    timings.translation_s = secs(t0, t1);

    let dk = detection_key(&tk, models, cfg);
    if !cache.candidates.contains_key(&dk) {
        let tr = &cache.translated[&tk];
        let c = detect_slide(&tr.canvas, &tr.patches, &models.detector, cfg).map_err(|e| e.in_stage("detection"))?;
        cache.candidates.insert(dk, c);
        cache.count("detection");
    }
    let t2 = clock.now_ns();
    timings.detection_s = secs(t1, t2);

    let ck = classification_key(&dk, models, cfg);
    if !cache.results.contains_key(&ck) {
        let source = if cfg.crops_from_translated { &cache.translated[&tk].canvas } else { image };
        let r = classify_candidates(source, &cache.candidates[&dk], &models.classifier, cfg).map_err(|e| e.in_stage("classification"))?;
        cache.results.insert(ck, r);
        cache.count("classification");
    }
    timings.classification_s = secs(t2, clock.now_ns());

    let tr = &cache.translated[&tk];
    Ok(SlideResult {
        slide_id: slide_id.into(),
        mitoses: cache.results[&ck].clone(),
        candidates_total: cache.candidates[&dk].len(),
        patches_total: tr.patches_total,
        patches_with_tissue: tr.patches.len(),
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small_models(tile: usize) -> (Models, PipelineConfig) {
        let detector = DetectorModel::new(DetectorConfig {
            tile_size: tile,
            backbone_depth: 2,
            backbone_width: 4,
            anchor_sizes: vec![12.0],
            anchor_ratios: vec![1.0],
            ..DetectorConfig::default()
        })
        .unwrap();
        let classifier = ClassifierModel::new(ClassifierConfig {
            crop_size: 16,
            network_input: 16,
            depth: 1,
            width: 2,
            ..ClassifierConfig::default()
        })
        .unwrap();
        let cfg = PipelineConfig {
            translation: TranslationConfig {
                patch_size: 64,
                generator_width: 2,
                residual_blocks: 1,
                generator_depth: 1,
                ..TranslationConfig::default()
            },
            detector: detector.config.clone(),
            classifier: classifier.config.clone(),
            tiling: TilingConfig {
                translation_stride: 64,
                detection_stride: 24,
                ..TilingConfig::default()
            },
            ..PipelineConfig::default()
        };
        let translation = Some(TranslationModel::new(cfg.translation.clone()).unwrap());
        (
            Models {
                translation,
                detector,
                classifier,
            },
            cfg,
        )
    }

    #[test]
    fn blank_slide_is_empty_not_an_error() {
        let (models, cfg) = small_models(32);
        let white = Raster::filled(100, 70, [1.0; 3]);
        let r = run_slide("w", &white, &models, &cfg, &NullClock).unwrap();
        assert_eq!(r.candidates_total, 0);
        assert!(r.mitoses.is_empty());
        assert_eq!(r.patches_with_tissue, 0);
        assert!(r.patches_total > 0);
    }

    #[test]
    fn cache_recomputes_only_downstream() {
        let (models, mut cfg) = small_models(32);
        let img = Raster::from_fn(80, 80, |x, y| [0.5 + 0.3 * ((x + y) % 2) as f32, 0.4, 0.6]);
        let mut cache = StageCache::new();
        let a = run_slide_cached("s", &img, &models, &cfg, &NullClock, &mut cache).unwrap();
        let b = run_slide_cached("s", &img, &models, &cfg, &NullClock, &mut cache).unwrap();
        assert_eq!(a, b);
        assert_eq!(cache.computed.values().sum::<usize>(), 3);
        cfg.classifier.confidence_threshold = 0.1;
        run_slide_cached("s", &img, &models, &cfg, &NullClock, &mut cache).unwrap();
        assert_eq!(cache.computed["classification"], 2);
        assert_eq!(cache.computed["detection"], 1);
        cfg.detector.score_threshold = 0.2;
        run_slide_cached("s", &img, &models, &cfg, &NullClock, &mut cache).unwrap();
        assert_eq!(cache.computed["detection"], 2);
        assert_eq!(cache.computed["translation"], 1);
    }

    #[test]
    fn stage_errors_are_tagged() {
        let (models, mut cfg) = small_models(32);
        cfg.translation.patch_size = 63;
        cfg.translation.generator_depth = 0;
        let img = Raster::filled(80, 80, [0.3; 3]);
        let err = run_slide("s", &img, &models, &cfg, &NullClock).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "translation", .. }), "{err:?}");
    }

    #[test]
    fn ordering() {
        let mut v = vec![
            (Point::new(5.0, 1.0), 0.8),
            (Point::new(1.0, 9.0), 0.9),
            (Point::new(1.0, 2.0), 0.8),
            (Point::new(1.0, 1.0), 0.8),
        ];
        v.sort_by(result_order);
        let xs: Vec<(f64, f64)> = v.iter().map(|(p, _)| (p.x, p.y)).collect();
        assert_eq!(xs, vec![(1.0, 9.0), (1.0, 1.0), (1.0, 2.0), (5.0, 1.0)]);
    }
}
