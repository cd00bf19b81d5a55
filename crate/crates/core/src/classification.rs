//! Mitosis versus look-alike classifier on fixed-size crops around
//! candidate centers.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NamedTensor, Stage};
use crate::data::{Annotation, Label};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::nn::{softmax, Adam, Chain, Conv2d, Linear, Op, ParamLayout, Tensor};
use crate::raster::Raster;
use crate::rng;

const SLOPE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub crop_size: usize,
    /// Crops are resized to this side before entering the network.
    pub network_input: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    /// Decision is `probability >= confidence_threshold`.
    pub confidence_threshold: f64,
    pub batch_size: usize,
    /// Number of conv + pool stages.
    pub depth: usize,
    /// Channels of the first stage; stage `i` has `width * (i + 1)`.
    pub width: usize,
    /// Randomly rotated copies added per crop by offline augmentation.
    pub offline_rotations: usize,
    pub online: OnlineAugment,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            crop_size: 50,
            network_input: 64,
            epochs: 50,
            learning_rate: 0.001,
            early_stop_patience: 5,
            confidence_threshold: 0.7,
            batch_size: 16,
            depth: 3,
            width: 16,
            offline_rotations: 2,
            online: OnlineAugment::default(),
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) || !(0.0..=0.5).contains(&self.online.shift_fraction) {
            return Err(Error::config("classifier threshold or shift fraction out of range"));
        }
        if self.crop_size == 0 || self.network_input == 0 || self.epochs == 0 || self.batch_size == 0 || self.width == 0 {
            return Err(Error::config("classifier sizes and counts must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("classifier learning rate must be positive"));
        }
        if self.network_input % (1 << self.depth) != 0 {
            return Err(Error::IndivisibleSize {
                width: self.network_input,
                height: self.network_input,
                divisor: 1 << self.depth,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineAugment {
    /// Largest shift along each axis as a fraction of the side.
    pub shift_fraction: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
}

impl Default for OnlineAugment {
    fn default() -> Self {
        Self {
            shift_fraction: 0.1,
            horizontal_flip: true,
            vertical_flip: true,
        }
    }
}

impl OnlineAugment {
    pub const NONE: OnlineAugment = OnlineAugment {
        shift_fraction: 0.0,
        horizontal_flip: false,
        vertical_flip: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropLabel {
    NonMitosis,
    Mitosis,
}

impl CropLabel {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl From<Label> for CropLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Mitosis => CropLabel::Mitosis,
            Label::HardNegative => CropLabel::NonMitosis,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCrop {
    pub pixels: Raster,
    pub label: CropLabel,
    pub slide_id: String,
    pub center: Point,
}

/// `crop_size` square whose center pixel is `center` rounded half up;
/// mirror-padded past the image border.
pub fn make_crop(image: &Raster, center: Point, crop_size: usize) -> Result<Raster> {
    let (w, h) = (image.width() as f64, image.height() as f64);
    if !(center.x >= 0.0 && center.y >= 0.0 && center.x < w && center.y < h) {
        return Err(Error::PointOutsideImage {
            x: center.x,
            y: center.y,
            width: image.width(),
            height: image.height(),
        });
    }
    let (cx, cy) = center.round_half_up();
    let half = (crop_size / 2) as i64;
    Ok(image.crop_reflect(cx - half, cy - half, crop_size, crop_size))
}

/// Crops at the box centers of one slide's annotations.
pub fn crops_from_annotations(image: &Raster, annotations: &[&Annotation], crop_size: usize) -> Result<Vec<LabeledCrop>> {
    annotations
        .iter()
        .map(|a| {
            let c = a.bbox.center();
            Ok(LabeledCrop {
                pixels: make_crop(image, c, crop_size)?,
                label: a.label.into(),
                slide_id: a.slide_id.clone(),
                center: c,
            })
        })
        .collect()
}

/// The crop, its vertical flip, and `rotations` copies turned by a random
/// multiple of 90 degrees.
pub fn augment_offline(crop: &LabeledCrop, rotations: usize, seed: u64) -> Vec<LabeledCrop> {
    let mut rng = rng::seeded(seed);
    let with = |pixels: Raster| LabeledCrop {
        pixels,
        ..crop.clone()
    };
    let mut out = Vec::with_capacity(2 + rotations);
    out.push(crop.clone());
    out.push(with(crop.pixels.flip_vertical()));
    for _ in 0..rotations {
        let k = rng.random_range(1..=3u32);
        out.push(with(crop.pixels.rotate90(k)));
    }
    out
}

fn augment_one(r: &Raster, aug: &OnlineAugment, rng: &mut impl Rng) -> Raster {
    let max_x = libm::floor(aug.shift_fraction * r.width() as f64) as i64;
    let max_y = libm::floor(aug.shift_fraction * r.height() as f64) as i64;
    let mut out = if max_x > 0 || max_y > 0 {
        let dx = rng.random_range(-max_x..=max_x);
        let dy = rng.random_range(-max_y..=max_y);
        r.shift_reflect(dx, dy)
    } else {
        r.clone()
    };
    if aug.horizontal_flip && rng.random_bool(0.5) {
        out = out.flip_horizontal();
    }
    if aug.vertical_flip && rng.random_bool(0.5) {
        out = out.flip_vertical();
    }
    out
}

/// Random shift (mirror-filled) and flips per sample.
pub fn augment_online(batch: &[Raster], aug: &OnlineAugment, seed: u64) -> Vec<Raster> {
    let mut rng = rng::seeded(seed);
    batch.iter().map(|r| augment_one(r, aug, &mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHistory {
    pub epochs: Vec<ClassifierEpoch>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    features: Chain,
    fc: Linear,
    pub params: Vec<f64>,
}

impl ClassifierModel {
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = ParamLayout::new();
        let mut features = Chain::new();
        let mut in_c = 3;
        for i in 0..config.depth {
            let out_c = config.width * (i + 1);
            features.push(Op::Conv(Conv2d::new(&mut layout, in_c, out_c, 3)));
            features.push(Op::LeakyRelu(SLOPE));
            features.push(Op::AvgPool2);
            in_c = out_c;
        }
        let fc = Linear::new(&mut layout, in_c, 2);
        let mut params = vec![0.0; layout.len()];
        let mut rng = rng::stream(config.seed, 1);
        for c in features.convs() {
            c.init_he(&mut params, &mut rng);
        }
        fc.init(&mut params, &mut rng);
        Ok(Self {
            config,
            features,
            fc,
            params,
        })
    }

    /// Network input tensor for a crop of `crop_size`.
    pub fn prepare(&self, crop: &Raster) -> Result<Tensor> {
        let s = self.config.crop_size;
        if crop.width() != s || crop.height() != s {
            return Err(Error::shape(format!("{s}x{s} crop"), format!("{}x{}", crop.width(), crop.height())));
        }
        let n = self.config.network_input;
        Ok(Tensor::from_raster(&crop.resize_bilinear(n, n)))
    }

    pub fn logits_with(&self, p: &[f64], x: &Tensor) -> Vec<f64> {
        let f = self.features.forward(p, x);
        self.fc.forward(p, &global_mean(&f))
    }

    /// Cross-entropy summed over `batch`, times `scale`; gradients are
    /// accumulated into `grad` when given.
    pub fn loss(&self, p: &[f64], batch: &[(&Tensor, CropLabel)], scale: f64, mut grad: Option<&mut [f64]>) -> f64 {
        let mut total = 0.0;
        for (x, label) in batch {
            let (f, inputs) = self.features.forward_cached(p, x);
            let pooled = global_mean(&f);
            let logits = self.fc.forward(p, &pooled);
            let probs = softmax(&logits);
            let k = label.index();
            total -= scale * libm::log(probs[k].max(1e-300));
            if let Some(g) = grad.as_deref_mut() {
                let mut dl = probs.clone();
                dl[k] -= 1.0;
                for v in &mut dl {
                    *v *= scale;
                }
                let dpool = self.fc.backward(p, &pooled, &dl, g);
                let hw = (f.h * f.w) as f64;
                let mut df = Tensor::zeros_like(&f);
                for c in 0..f.c {
                    let plane = &mut df.data[c * f.h * f.w..(c + 1) * f.h * f.w];
                    plane.fill(dpool[c] / hw);
                }
                self.features.backward(p, &inputs, df, g, false);
            }
        }
        total
    }

    pub fn to_checkpoint(&self, history: Option<&ClassifierHistory>) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(Stage::Classifier, &self.config)?;
        ck.tensors.push(NamedTensor::flat("params", self.params.clone()));
        if let Some(h) = history {
            ck.epoch = h.best_epoch as u64;
            ck.push_series("train_loss", h.epochs.iter().map(|e| e.train_loss).collect());
            ck.push_series("val_loss", h.epochs.iter().map(|e| e.val_loss).collect());
            ck.push_series("val_accuracy", h.epochs.iter().map(|e| e.val_accuracy).collect());
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage(Stage::Classifier)?;
        let mut model = Self::new(ck.config()?)?;
        model.params = ck.tensor_sized("params", model.params.len())?;
        Ok(model)
    }
}

fn global_mean(f: &Tensor) -> Vec<f64> {
    (0..f.c).map(|c| f.plane(c).iter().sum::<f64>() / (f.h * f.w) as f64).collect()
}

pub fn decide(probability: f64, threshold: f64) -> bool {
    probability >= threshold
}

/// Mitosis probability and the thresholded decision.
pub fn classify(crop: &Raster, model: &ClassifierModel) -> Result<(f64, bool)> {
    let x = model.prepare(crop)?;
    let p = softmax(&model.logits_with(&model.params, &x))[CropLabel::Mitosis.index()];
    Ok((p, decide(p, model.config.confidence_threshold)))
}

pub fn classify_batch(crops: &[Raster], model: &ClassifierModel) -> Result<Vec<(f64, bool)>> {
    crops.iter().map(|c| classify(c, model)).collect()
}

fn evaluate(model: &ClassifierModel, p: &[f64], data: &[(Tensor, CropLabel)]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, label) in data {
        let probs = softmax(&model.logits_with(p, x));
        loss -= libm::log(probs[label.index()].max(1e-300));
        let predicted = if probs[1] >= 0.5 { CropLabel::Mitosis } else { CropLabel::NonMitosis };
        correct += (predicted == *label) as usize;
    }
    let n = data.len().max(1) as f64;
    (loss / n, correct as f64 / n)
}

/// Minibatch cross-entropy training with online augmentation and early
/// stopping on validation loss; the best epoch's weights are returned.
pub fn train_classifier(
    train: &[LabeledCrop],
    val: &[LabeledCrop],
    cfg: &ClassifierConfig,
) -> Result<(ClassifierModel, ClassifierHistory)> {
    let mut model = ClassifierModel::new(cfg.clone())?;
    if train.is_empty() {
        return Err(Error::Empty("classifier training crops"));
    }
    if val.is_empty() {
        return Err(Error::Empty("classifier validation crops"));
    }
    let has = |l: CropLabel| train.iter().any(|c| c.label == l);
    if !has(CropLabel::Mitosis) || !has(CropLabel::NonMitosis) {
        return Err(Error::SingleClass);
    }
    for c in train.iter().chain(val) {
        model.prepare(&c.pixels)?;
    }
    let val_data: Vec<(Tensor, CropLabel)> = val.iter().map(|c| Ok((model.prepare(&c.pixels)?, c.label))).collect::<Result<_>>()?;

    let mut rng = rng::stream(cfg.seed, 2);
    let mut opt = Adam::new(model.params.len(), cfg.learning_rate, 0.9, 0.999);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut history = ClassifierHistory::default();
    let mut best = (f64::INFINITY, model.params.clone());
    let mut waited = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let rasters: Vec<Raster> = chunk.iter().map(|&i| train[i].pixels.clone()).collect();
            let augmented = augment_online(&rasters, &cfg.online, rng.next_u64());
            let inputs: Vec<Tensor> = augmented.iter().map(|r| model.prepare(r)).collect::<Result<_>>()?;
            let batch: Vec<(&Tensor, CropLabel)> = inputs.iter().zip(chunk).map(|(x, &i)| (x, train[i].label)).collect();
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            train_loss += model.loss(&model.params, &batch, scale, Some(&mut grad)) * batch.len() as f64;
            opt.step(&mut model.params, &grad);
        }
        let (val_loss, val_accuracy) = evaluate(&model, &model.params, &val_data);
        history.epochs.push(ClassifierEpoch {
            epoch,
            train_loss: train_loss / train.len() as f64,
            val_loss,
            val_accuracy,
        });
        if val_loss < best.0 {
            best = (val_loss, model.params.clone());
            history.best_epoch = epoch;
            waited = 0;
        } else {
            waited += 1;
            if waited > cfg.early_stop_patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    model.params = best.1;
    Ok((model, history))
}
