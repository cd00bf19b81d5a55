//! Single-stage anchor-based candidate detector with focal loss.
//!
//! One foreground class: the detector proposes mitoses and look-alikes
//! alike, and the classifier sorts them out afterwards.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NamedTensor, Stage};
use crate::error::{Error, Result};
use crate::geometry::{iou, nms, BoundingBox, Detection, Point};
use crate::nn::{sigmoid, softplus, Adam, Chain, Conv2d, Op, ParamLayout, Tensor};
use crate::raster::Raster;
use crate::rng;

const SLOPE: f64 = 0.1;

/// Largest log-scale box delta honored at inference.
pub const MAX_LOG_DELTA: f64 = 4.135166556742356;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub tile_size: usize,
    pub nms_iou: f64,
    /// Applied to sigmoid scores before NMS.
    pub score_threshold: f64,
    pub learning_rate: f64,
    pub train_iterations: usize,
    pub batch_size: usize,
    pub anchor_sizes: Vec<f64>,
    /// Height over width.
    pub anchor_ratios: Vec<f64>,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub pos_iou: f64,
    pub neg_iou: f64,
    /// Also mark each truth's best-overlapping anchors positive.
    pub low_quality_matches: bool,
    pub box_loss_weight: f64,
    pub smooth_l1_beta: f64,
    /// Initial foreground probability of the classification head.
    pub prior_probability: f64,
    /// Number of 2x poolings; the feature stride is `2^backbone_depth`.
    pub backbone_depth: usize,
    pub backbone_width: usize,
    /// Cap on scored anchors passed to NMS per tile.
    pub max_candidates: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            tile_size: 512,
            nms_iou: 0.1,
            score_threshold: 0.35,
            learning_rate: 0.0001,
            train_iterations: 10000,
            batch_size: 4,
            anchor_sizes: vec![32.0, 40.31747359663594, 50.79683366298238],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            pos_iou: 0.5,
            neg_iou: 0.4,
            low_quality_matches: true,
            box_loss_weight: 1.0,
            smooth_l1_beta: 0.1,
            prior_probability: 0.01,
            backbone_depth: 5,
            backbone_width: 16,
            max_candidates: 1000,
            seed: 0,
        }
    }
}

fn unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl DetectorConfig {
    pub fn stride(&self) -> usize {
        1 << self.backbone_depth
    }

    pub fn anchors_per_location(&self) -> usize {
        self.anchor_sizes.len() * self.anchor_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(unit(self.nms_iou) && unit(self.score_threshold) && unit(self.pos_iou) && unit(self.neg_iou) && unit(self.focal_alpha)) {
            return Err(Error::config("detector thresholds must lie in [0, 1]"));
        }
        if self.neg_iou > self.pos_iou {
            return Err(Error::config("neg_iou must not exceed pos_iou"));
        }
        if !(self.prior_probability > 0.0 && self.prior_probability < 1.0) {
            return Err(Error::config("prior_probability must lie in (0, 1)"));
        }
        if self.tile_size == 0
            || self.train_iterations == 0
            || self.batch_size == 0
            || self.backbone_width == 0
            || self.max_candidates == 0
        {
            return Err(Error::config("detector sizes and counts must be positive"));
        }
        if self.anchor_sizes.is_empty() || self.anchor_ratios.is_empty() {
            return Err(Error::config("at least one anchor size and ratio required"));
        }
        if self.anchor_sizes.iter().chain(&self.anchor_ratios).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config("anchor sizes and ratios must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.focal_gamma >= 0.0) || !(self.smooth_l1_beta > 0.0) || !(self.box_loss_weight >= 0.0) {
            return Err(Error::config("learning rate, gamma, beta and box weight out of range"));
        }
        if self.tile_size % self.stride() != 0 {
            return Err(Error::IndivisibleSize {
                width: self.tile_size,
                height: self.tile_size,
                divisor: self.stride(),
            });
        }
        Ok(())
    }
}

/// Reference boxes, ordered by location (row-major), then size, then ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub stride: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    pub per_location: usize,
    pub boxes: Vec<BoundingBox>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

pub fn generate_anchors(cfg: &DetectorConfig, tile: usize) -> Result<AnchorSet> {
    let stride = cfg.stride();
    if tile == 0 || tile % stride != 0 {
        return Err(Error::IndivisibleSize {
            width: tile,
            height: tile,
            divisor: stride,
        });
    }
    let g = tile / stride;
    let mut boxes = Vec::with_capacity(g * g * cfg.anchors_per_location());
    for i in 0..g {
        for j in 0..g {
            let c = Point::new((j as f64 + 0.5) * stride as f64, (i as f64 + 0.5) * stride as f64);
            for &size in &cfg.anchor_sizes {
                for &ratio in &cfg.anchor_ratios {
                    let r = libm::sqrt(ratio);
                    boxes.push(BoundingBox::from_center(c, size / r, size * r)?);
                }
            }
        }
    }
    Ok(AnchorSet {
        stride,
        grid_width: g,
        grid_height: g,
        per_location: cfg.anchors_per_location(),
        boxes,
    })
}

/// Center/size offsets of `truth` relative to `anchor`.
pub fn encode_box(anchor: &BoundingBox, truth: &BoundingBox) -> [f64; 4] {
    let (a, t) = (anchor.center(), truth.center());
    [
        (t.x - a.x) / anchor.width(),
        (t.y - a.y) / anchor.height(),
        libm::log(truth.width() / anchor.width()),
        libm::log(truth.height() / anchor.height()),
    ]
}

pub fn decode_box(anchor: &BoundingBox, d: [f64; 4]) -> Result<BoundingBox> {
    let a = anchor.center();
    let c = Point::new(a.x + d[0] * anchor.width(), a.y + d[1] * anchor.height());
    BoundingBox::from_center(c, anchor.width() * libm::exp(d[2]), anchor.height() * libm::exp(d[3]))
}

pub const NEGATIVE: i8 = 0;
pub const POSITIVE: i8 = 1;
pub const IGNORED: i8 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTargets {
    /// [`POSITIVE`], [`NEGATIVE`] or [`IGNORED`] per anchor.
    pub labels: Vec<i8>,
    /// Box deltas; meaningful for positive anchors only.
    pub deltas: Vec<[f64; 4]>,
    /// Assigned truth index for positive anchors.
    pub matched: Vec<Option<usize>>,
    pub num_positive: usize,
}

pub fn encode_targets(anchors: &AnchorSet, truth: &[BoundingBox], cfg: &DetectorConfig) -> AnchorTargets {
    let n = anchors.len();
    let mut labels = vec![NEGATIVE; n];
    let mut matched = vec![None; n];
    if !truth.is_empty() {
        let mut best_for_truth = vec![0.0f64; truth.len()];
        let mut overlaps = vec![0.0f64; n * truth.len()];
        for (a, anchor) in anchors.boxes.iter().enumerate() {
            let mut best = (0.0, 0usize);
            for (t, tb) in truth.iter().enumerate() {
                let v = iou(anchor, tb);
                overlaps[a * truth.len() + t] = v;
                if v > best.0 {
                    best = (v, t);
                }
                best_for_truth[t] = best_for_truth[t].max(v);
            }
            if best.0 >= cfg.pos_iou {
                labels[a] = POSITIVE;
                matched[a] = Some(best.1);
            } else if best.0 >= cfg.neg_iou {
                labels[a] = IGNORED;
            }
        }
        if cfg.low_quality_matches {
            for (t, &b) in best_for_truth.iter().enumerate() {
                if b <= 0.0 {
                    continue;
                }
                for a in 0..n {
                    if overlaps[a * truth.len() + t] == b && labels[a] != POSITIVE {
                        labels[a] = POSITIVE;
                        matched[a] = Some(t);
                    }
                }
            }
        }
    }
    let deltas = (0..n)
        .map(|a| match matched[a] {
            Some(t) => encode_box(&anchors.boxes[a], &truth[t]),
            None => [0.0; 4],
        })
        .collect();
    let num_positive = labels.iter().filter(|&&l| l == POSITIVE).count();
    AnchorTargets {
        labels,
        deltas,
        matched,
        num_positive,
    }
}

/// Sigmoid focal loss of one logit and its derivative with respect to the
/// logit.
pub fn focal_loss(logit: f64, positive: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    if positive {
        let log_p = -softplus(-logit);
        let m = powf(1.0 - p, gamma);
        let loss = -alpha * m * log_p;
        let grad = alpha * m * (gamma * p * log_p - (1.0 - p));
        (loss, grad)
    } else {
        let log_q = -softplus(logit);
        let m = powf(p, gamma);
        let loss = -(1.0 - alpha) * m * log_q;
        let grad = (1.0 - alpha) * m * (p - gamma * (1.0 - p) * log_q);
        (loss, grad)
    }
}

fn powf(base: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        libm::pow(base, e)
    }
}

/// Smooth-L1 (Huber with transition at `beta`) and its derivative.
pub fn smooth_l1(x: f64, beta: f64) -> (f64, f64) {
    if x.abs() < beta {
        (0.5 * x * x / beta, x / beta)
    } else {
        (x.abs() - 0.5 * beta, x.signum())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorLoss {
    pub total: f64,
    pub classification: f64,
    pub box_regression: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorHistory {
    pub loss: Vec<f64>,
    pub classification: Vec<f64>,
    pub box_regression: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    backbone: Chain,
    cls: Conv2d,
    reg: Conv2d,
    anchors: AnchorSet,
    pub params: Vec<f64>,
}

impl DetectorModel {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let anchors = generate_anchors(&config, config.tile_size)?;
        let mut layout = ParamLayout::new();
        let mut backbone = Chain::new();
        let w = config.backbone_width;
        let mut in_c = 3;
        for _ in 0..config.backbone_depth {
            backbone.push(Op::Conv(Conv2d::new(&mut layout, in_c, w, 3)));
            backbone.push(Op::LeakyRelu(SLOPE));
            backbone.push(Op::AvgPool2);
            in_c = w;
        }
        backbone.push(Op::Conv(Conv2d::new(&mut layout, in_c, w, 3)));
        backbone.push(Op::LeakyRelu(SLOPE));
        let a = config.anchors_per_location();
        let cls = Conv2d::new(&mut layout, w, a, 3);
        let reg = Conv2d::new(&mut layout, w, 4 * a, 3);

        let mut params = vec![0.0; layout.len()];
        let mut rng = rng::stream(config.seed, 1);
        for c in backbone.convs() {
            c.init_he(&mut params, &mut rng);
        }
        let prior = config.prior_probability;
        cls.init_uniform(&mut params, &mut rng, 0.01, -libm::log((1.0 - prior) / prior));
        reg.init_uniform(&mut params, &mut rng, 0.01, 0.0);
        Ok(Self {
            config,
            backbone,
            cls,
            reg,
            anchors,
            params,
        })
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    /// Zero the classification weights, leaving only the prior bias.
    pub fn zero_classification_weights(&mut self) {
        self.cls.weights_mut(&mut self.params).fill(0.0);
    }

    /// Per-location classification logits and box deltas.
    pub fn forward_with(&self, p: &[f64], x: &Tensor) -> (Tensor, Tensor) {
        let f = self.backbone.forward(p, x);
        (self.cls.forward(p, &f), self.reg.forward(p, &f))
    }

    fn check_tile(&self, r: &Raster) -> Result<()> {
        let s = self.config.tile_size;
        if r.width() != s || r.height() != s {
            return Err(Error::shape(format!("{s}x{s} tile"), format!("{}x{}", r.width(), r.height())));
        }
        Ok(())
    }

    /// Batch loss normalized by the number of positive anchors (at least 1);
    /// accumulates parameter gradients into `grad` when given.
    pub fn loss(&self, p: &[f64], batch: &[(&Tensor, &AnchorTargets)], mut grad: Option<&mut [f64]>) -> DetectorLoss {
        let cfg = &self.config;
        let norm = batch.iter().map(|(_, t)| t.num_positive).sum::<usize>().max(1) as f64;
        let a_per = self.anchors.per_location;
        let mut out = DetectorLoss::default();
        for (x, targets) in batch {
            let (f, inputs) = self.backbone.forward_cached(p, x);
            let cls = self.cls.forward(p, &f);
            let reg = self.reg.forward(p, &f);
            let hw = f.h * f.w;
            let mut d_cls = Tensor::zeros_like(&cls);
            let mut d_reg = Tensor::zeros_like(&reg);
            for loc in 0..hw {
                for a in 0..a_per {
                    let n = loc * a_per + a;
                    let label = targets.labels[n];
                    if label == IGNORED {
                        continue;
                    }
                    let ci = a * hw + loc;
                    let (l, d) = focal_loss(cls.data[ci], label == POSITIVE, cfg.focal_alpha, cfg.focal_gamma);
                    out.classification += l / norm;
                    d_cls.data[ci] = d / norm;
                    if label == POSITIVE {
                        for k in 0..4 {
                            let ri = (a * 4 + k) * hw + loc;
                            let (l, d) = smooth_l1(reg.data[ri] - targets.deltas[n][k], cfg.smooth_l1_beta);
                            out.box_regression += cfg.box_loss_weight * l / norm;
                            d_reg.data[ri] = cfg.box_loss_weight * d / norm;
                        }
                    }
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                let mut df = self.cls.backward(p, &f, &d_cls, g, true);
                df.add_assign(&self.reg.backward(p, &f, &d_reg, g, true));
                self.backbone.backward(p, &inputs, df, g, false);
            }
        }
        out.total = out.classification + out.box_regression;
        out
    }

    pub fn to_checkpoint(&self, history: Option<&DetectorHistory>) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(Stage::Detector, &self.config)?;
        ck.tensors.push(NamedTensor::flat("params", self.params.clone()));
        if let Some(h) = history {
            ck.epoch = h.loss.len() as u64;
            ck.push_series("loss", h.loss.clone());
            ck.push_series("classification", h.classification.clone());
            ck.push_series("box_regression", h.box_regression.clone());
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage(Stage::Detector)?;
        let mut model = Self::new(ck.config()?)?;
        model.params = ck.tensor_sized("params", model.params.len())?;
        Ok(model)
    }
}

pub fn train_detector(tiles: &[(Raster, Vec<BoundingBox>)], cfg: &DetectorConfig) -> Result<(DetectorModel, DetectorHistory)> {
    let mut model = DetectorModel::new(cfg.clone())?;
    if tiles.is_empty() {
        return Err(Error::Empty("detector training tiles"));
    }
    let mut data = Vec::with_capacity(tiles.len());
    for (r, truth) in tiles {
        model.check_tile(r)?;
        data.push((Tensor::from_raster(r), encode_targets(&model.anchors, truth, cfg)));
    }
    if data.iter().all(|(_, t)| t.num_positive == 0) {
        return Err(Error::NoPositiveAnchors);
    }

    let mut rng = rng::stream(cfg.seed, 2);
    let mut opt = Adam::new(model.params.len(), cfg.learning_rate, 0.9, 0.999);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut history = DetectorHistory::default();
    let mut grad = vec![0.0; model.params.len()];
    for _ in 0..cfg.train_iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (x, t) = &data[order[cursor]];
            batch.push((x, t));
            cursor += 1;
        }
        grad.fill(0.0);
        let l = model.loss(&model.params, &batch, Some(&mut grad));
        opt.step(&mut model.params, &grad);
        history.loss.push(l.total);
        history.classification.push(l.classification);
        history.box_regression.push(l.box_regression);
    }
    Ok((model, history))
}

/// Candidate boxes in the tile frame, sorted by descending score.
///
/// Only the score threshold, NMS threshold and candidate cap are read from
/// `cfg`; the architecture and anchors come from the model.
pub fn detect(tile: &Raster, model: &DetectorModel, cfg: &DetectorConfig) -> Result<Vec<Detection>> {
    model.check_tile(tile)?;
    let (cls, reg) = model.forward_with(&model.params, &Tensor::from_raster(tile));
    let hw = cls.h * cls.w;
    let a_per = model.anchors.per_location;
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for loc in 0..hw {
        for a in 0..a_per {
            let s = sigmoid(cls.data[a * hw + loc]);
            if s >= cfg.score_threshold {
                scored.push((s, loc * a_per + a));
            }
        }
    }
    scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    scored.truncate(cfg.max_candidates);
    let size = model.config.tile_size as f64;
    let mut dets = Vec::with_capacity(scored.len());
    for (s, n) in scored {
        let (loc, a) = (n / a_per, n % a_per);
        let mut d = [0.0; 4];
        for (k, v) in d.iter_mut().enumerate() {
            *v = reg.data[(a * 4 + k) * hw + loc];
        }
        d[2] = d[2].min(MAX_LOG_DELTA);
        d[3] = d[3].min(MAX_LOG_DELTA);
        let Ok(b) = decode_box(&model.anchors.boxes[n], d) else {
            continue;
        };
        if let Some(b) = b.clip(size, size) {
            dets.push(Detection::new(b, s, 0));
        }
    }
    Ok(nms(&dets, cfg.nms_iou))
}

/// Random truth boxes for gradient and round-trip checks.
#[doc(hidden)]
pub fn random_box(rng: &mut impl Rng, extent: f64) -> BoundingBox {
    let x = rng.random_range(0.0..extent);
    let y = rng.random_range(0.0..extent);
    let w = rng.random_range(1.0..extent / 2.0);
    let h = rng.random_range(1.0..extent / 2.0);
    BoundingBox::new(x, y, x + w, y + h).expect("positive size")
}
