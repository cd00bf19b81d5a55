//! Unpaired stain translation into the reference scanner domain.
//!
//! Two residual encoder-decoder generators (A to B and B to A) and two
//! patch discriminators are trained jointly with least-squares adversarial
//! terms and an L1 cycle-consistency term weighted by `cycle_weight`.
//! Generators predict a residual on top of their input, so a zero output
//! head makes the translation an exact identity.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NamedTensor, Stage};
use crate::error::{Error, Result};
use crate::nn::{Adam, Chain, Conv2d, Op, ParamLayout, Tensor};
use crate::raster::Raster;
use crate::rng;

const SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorInit {
    #[default]
    Random,
    /// Residual branches start at zero: the generator is the identity map.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslationConfig {
    pub patch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub cycle_weight: f64,
    pub image_pool_size: usize,
    /// Number of 2x downsamplings in the generator encoder.
    pub generator_depth: usize,
    pub generator_width: usize,
    pub residual_blocks: usize,
    pub discriminator_depth: usize,
    pub discriminator_width: usize,
    pub init: GeneratorInit,
    pub seed: u64,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        Self {
            patch_size: 1024,
            epochs: 200,
            learning_rate: 0.0002,
            beta1: 0.5,
            cycle_weight: 10.0,
            image_pool_size: 50,
            generator_depth: 2,
            generator_width: 16,
            residual_blocks: 3,
            discriminator_depth: 3,
            discriminator_width: 16,
            init: GeneratorInit::Random,
            seed: 0,
        }
    }
}

impl TranslationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0
            || self.epochs == 0
            || self.image_pool_size == 0
            || self.generator_width == 0
            || self.discriminator_width == 0
        {
            return Err(Error::config("translation sizes and counts must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.cycle_weight >= 0.0) {
            return Err(Error::config("translation learning rate must be positive"));
        }
        if self.patch_size % self.downsampling_factor() != 0 {
            return Err(Error::config(alloc::format!(
                "patch size {} is not divisible by the generator factor {}",
                self.patch_size,
                self.downsampling_factor()
            )));
        }
        Ok(())
    }

    pub fn downsampling_factor(&self) -> usize {
        1 << self.generator_depth
    }
}

/// Residual encoder-decoder with additive skips at every resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    encoder: Vec<Chain>,
    residual: Vec<Chain>,
    decoder: Vec<Chain>,
    head: Conv2d,
    pub params: Vec<f64>,
}

pub struct GeneratorCache {
    encoder: Vec<Vec<Tensor>>,
    residual: Vec<Vec<Tensor>>,
    decoder: Vec<Vec<Tensor>>,
    head_input: Tensor,
}

impl Generator {
    pub fn new(depth: usize, width: usize, residual_blocks: usize, init: GeneratorInit, rng: &mut impl Rng) -> Self {
        let mut layout = ParamLayout::new();
        let mut encoder = Vec::with_capacity(depth + 1);
        let mut first = Chain::new();
        first.push(Op::Conv(Conv2d::new(&mut layout, 3, width, 3))).push(Op::LeakyRelu(SLOPE));
        encoder.push(first);
        for _ in 0..depth {
            let mut c = Chain::new();
            c.push(Op::AvgPool2)
                .push(Op::Conv(Conv2d::new(&mut layout, width, width, 3)))
                .push(Op::LeakyRelu(SLOPE));
            encoder.push(c);
        }
        let residual: Vec<Chain> = (0..residual_blocks)
            .map(|_| {
                let mut c = Chain::new();
                c.push(Op::Conv(Conv2d::new(&mut layout, width, width, 3)))
                    .push(Op::LeakyRelu(SLOPE))
                    .push(Op::Conv(Conv2d::new(&mut layout, width, width, 3)));
                c
            })
            .collect();
        let decoder: Vec<Chain> = (0..depth)
            .map(|_| {
                let mut c = Chain::new();
                c.push(Op::Conv(Conv2d::new(&mut layout, width, width, 3))).push(Op::LeakyRelu(SLOPE));
                c
            })
            .collect();
        let head = Conv2d::new(&mut layout, width, 3, 1);

        let mut params = vec![0.0; layout.len()];
        for chain in encoder.iter().chain(&decoder) {
            for conv in chain.convs() {
                conv.init_he(&mut params, rng);
            }
        }
        for chain in &residual {
            let convs: Vec<&Conv2d> = chain.convs().collect();
            convs[0].init_he(&mut params, rng);
            match init {
                GeneratorInit::Random => convs[1].init_he(&mut params, rng),
                GeneratorInit::Identity => convs[1].init_uniform(&mut params, rng, 0.0, 0.0),
            }
        }
        match init {
            GeneratorInit::Random => head.init_uniform(&mut params, rng, libm::sqrt(1.0 / width as f64), 0.0),
            GeneratorInit::Identity => head.init_uniform(&mut params, rng, 0.0, 0.0),
        }
        Self {
            encoder,
            residual,
            decoder,
            head,
            params,
        }
    }

    pub fn from_config(cfg: &TranslationConfig, rng: &mut impl Rng) -> Self {
        Self::new(cfg.generator_depth, cfg.generator_width, cfg.residual_blocks, cfg.init, rng)
    }

    pub fn depth(&self) -> usize {
        self.decoder.len()
    }

    pub fn head(&self) -> &Conv2d {
        &self.head
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Unclamped output.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.forward_with(&self.params, x)
    }

    pub fn forward_with(&self, p: &[f64], x: &Tensor) -> Tensor {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut cur = x.clone();
        for chain in &self.encoder {
            cur = chain.forward(p, &cur);
            skips.push(cur.clone());
        }
        for chain in &self.residual {
            let r = chain.forward(p, &cur);
            cur.add_assign(&r);
        }
        for (i, chain) in self.decoder.iter().enumerate() {
            let level = self.decoder.len() - 1 - i;
            let mut up = upsample(&cur);
            up.add_assign(&skips[level]);
            cur = chain.forward(p, &up);
        }
        let mut out = self.head.forward(p, &cur);
        out.add_assign(x);
        out
    }

    pub fn forward_cached(&self, p: &[f64], x: &Tensor) -> (Tensor, GeneratorCache) {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut enc_cache = Vec::with_capacity(self.encoder.len());
        let mut cur = x.clone();
        for chain in &self.encoder {
            let (y, c) = chain.forward_cached(p, &cur);
            enc_cache.push(c);
            skips.push(y.clone());
            cur = y;
        }
        let mut res_cache = Vec::with_capacity(self.residual.len());
        for chain in &self.residual {
            let (r, c) = chain.forward_cached(p, &cur);
            res_cache.push(c);
            cur.add_assign(&r);
        }
        let mut dec_cache = Vec::with_capacity(self.decoder.len());
        for (i, chain) in self.decoder.iter().enumerate() {
            let level = self.decoder.len() - 1 - i;
            let mut up = upsample(&cur);
            up.add_assign(&skips[level]);
            let (y, c) = chain.forward_cached(p, &up);
            dec_cache.push(c);
            cur = y;
        }
        let mut out = self.head.forward(p, &cur);
        out.add_assign(x);
        (
            out,
            GeneratorCache {
                encoder: enc_cache,
                residual: res_cache,
                decoder: dec_cache,
                head_input: cur,
            },
        )
    }

    /// Accumulate parameter gradients into `g` and return the input gradient.
    pub fn backward(&self, p: &[f64], cache: &GeneratorCache, dout: &Tensor, g: &mut [f64]) -> Tensor {
        let mut dx = dout.clone();
        let mut du = self.head.backward(p, &cache.head_input, dout, g, true);
        let levels = self.encoder.len();
        let mut dskip: Vec<Option<Tensor>> = vec![None; levels];
        for (i, chain) in self.decoder.iter().enumerate().rev() {
            let level = self.decoder.len() - 1 - i;
            let dup = chain.backward(p, &cache.decoder[i], du, g, true);
            accumulate(&mut dskip[level], &dup);
            du = downsample_sum(&dup);
        }
        for (i, chain) in self.residual.iter().enumerate().rev() {
            let dr = chain.backward(p, &cache.residual[i], du.clone(), g, true);
            du.add_assign(&dr);
        }
        // `du` now flows into the deepest encoder output.
        accumulate(&mut dskip[levels - 1], &du);
        let mut carry: Option<Tensor> = None;
        for level in (0..levels).rev() {
            let mut d = dskip[level].take().expect("every level receives a gradient");
            if let Some(c) = carry.take() {
                d.add_assign(&c);
            }
            carry = Some(self.encoder[level].backward(p, &cache.encoder[level], d, g, true));
        }
        dx.add_assign(&carry.expect("at least one encoder level"));
        dx
    }
}

fn accumulate(slot: &mut Option<Tensor>, t: &Tensor) {
    match slot {
        Some(s) => s.add_assign(t),
        None => *slot = Some(t.clone()),
    }
}

fn upsample(x: &Tensor) -> Tensor {
    Chain { ops: vec![Op::Upsample2] }.forward(&[], x)
}

/// Adjoint of nearest upsampling.
fn downsample_sum(d: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(d.c, d.h / 2, d.w / 2);
    for c in 0..d.c {
        for i in 0..d.h {
            for j in 0..d.w {
                out.data[(c * out.h + i / 2) * out.w + j / 2] += d.data[(c * d.h + i) * d.w + j];
            }
        }
    }
    out
}

/// Patch discriminator producing a map of real/fake scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    chain: Chain,
    pub params: Vec<f64>,
}

impl Discriminator {
    pub fn new(depth: usize, width: usize, rng: &mut impl Rng) -> Self {
        let mut layout = ParamLayout::new();
        let mut chain = Chain::new();
        chain.push(Op::Conv(Conv2d::new(&mut layout, 3, width, 3))).push(Op::LeakyRelu(SLOPE));
        for _ in 0..depth {
            chain
                .push(Op::AvgPool2)
                .push(Op::Conv(Conv2d::new(&mut layout, width, width, 3)))
                .push(Op::LeakyRelu(SLOPE));
        }
        chain.push(Op::Conv(Conv2d::new(&mut layout, width, 1, 1)));
        let mut params = vec![0.0; layout.len()];
        let convs: Vec<Conv2d> = chain.convs().copied().collect();
        for (i, conv) in convs.iter().enumerate() {
            if i + 1 == convs.len() {
                conv.init_uniform(&mut params, rng, libm::sqrt(1.0 / width as f64), 0.0);
            } else {
                conv.init_he(&mut params, rng);
            }
        }
        Self { chain, params }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.chain.forward(&self.params, x)
    }

    /// Least-squares loss `mean((D(x) - target)^2)` with gradients
    /// accumulated into `g` (times `weight`); returns the loss and, when
    /// requested, the input gradient.
    pub fn lsgan(&self, p: &[f64], x: &Tensor, target: f64, weight: f64, g: &mut [f64], need_dx: bool) -> (f64, Tensor) {
        let (out, cache) = self.chain.forward_cached(p, x);
        let n = out.len() as f64;
        let mut loss = 0.0;
        let mut dout = out.clone();
        for v in &mut dout.data {
            let diff = *v - target;
            loss += diff * diff;
            *v = weight * 2.0 * diff / n;
        }
        let dx = self.chain.backward(p, &cache, dout, g, need_dx);
        (loss / n, dx)
    }
}

/// History buffer of generated images shown to the discriminators.
///
/// `size` counts the incoming image: the buffer keeps `size - 1` past
/// images, so a size of 1 passes every image straight through.
#[derive(Debug, Clone)]
pub struct ImagePool {
    size: usize,
    images: Vec<Tensor>,
}

impl ImagePool {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            images: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn query(&mut self, image: Tensor, rng: &mut impl Rng) -> Tensor {
        let history = self.size.saturating_sub(1);
        if history == 0 {
            return image;
        }
        if self.images.len() < history {
            self.images.push(image.clone());
            return image;
        }
        if rng.random_bool(0.5) {
            let i = rng.random_range(0..history);
            core::mem::replace(&mut self.images[i], image)
        } else {
            image
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationModel {
    pub config: TranslationConfig,
    pub g_ab: Generator,
    pub g_ba: Generator,
    pub d_a: Discriminator,
    pub d_b: Discriminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranslationEpoch {
    pub epoch: usize,
    /// Mean generator adversarial loss, A to B direction.
    pub adv_ab: f64,
    pub adv_ba: f64,
    pub disc_a: f64,
    pub disc_b: f64,
    /// Cycle loss over the full training set at the end of the epoch.
    pub cycle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationHistory {
    pub initial_cycle: f64,
    pub epochs: Vec<TranslationEpoch>,
}

impl TranslationModel {
    pub fn new(config: TranslationConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.seed, 1);
        let g_ab = Generator::from_config(&config, &mut rng);
        let g_ba = Generator::from_config(&config, &mut rng);
        let d_a = Discriminator::new(config.discriminator_depth, config.discriminator_width, &mut rng);
        let d_b = Discriminator::new(config.discriminator_depth, config.discriminator_width, &mut rng);
        Ok(Self {
            config,
            g_ab,
            g_ba,
            d_a,
            d_b,
        })
    }

    pub fn downsampling_factor(&self) -> usize {
        self.config.downsampling_factor()
    }

    pub fn to_checkpoint(&self, history: Option<&TranslationHistory>, epoch: u64) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(Stage::Translation, &self.config)?;
        ck.epoch = epoch;
        for (name, p) in [
            ("g_ab", &self.g_ab.params),
            ("g_ba", &self.g_ba.params),
            ("d_a", &self.d_a.params),
            ("d_b", &self.d_b.params),
        ] {
            ck.tensors.push(NamedTensor::flat(name, p.clone()));
        }
        if let Some(h) = history {
            ck.push_series("initial_cycle", vec![h.initial_cycle]);
            ck.push_series("cycle", h.epochs.iter().map(|e| e.cycle).collect());
            ck.push_series("adv_ab", h.epochs.iter().map(|e| e.adv_ab).collect());
            ck.push_series("adv_ba", h.epochs.iter().map(|e| e.adv_ba).collect());
            ck.push_series("disc_a", h.epochs.iter().map(|e| e.disc_a).collect());
            ck.push_series("disc_b", h.epochs.iter().map(|e| e.disc_b).collect());
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage(Stage::Translation)?;
        let config: TranslationConfig = ck.config()?;
        let mut model = Self::new(config)?;
        model.g_ab.params = ck.tensor_sized("g_ab", model.g_ab.params.len())?;
        model.g_ba.params = ck.tensor_sized("g_ba", model.g_ba.params.len())?;
        model.d_a.params = ck.tensor_sized("d_a", model.d_a.params.len())?;
        model.d_b.params = ck.tensor_sized("d_b", model.d_b.params.len())?;
        Ok(model)
    }
}

fn check_patch(r: &Raster, size: usize) -> Result<()> {
    if r.width() != size || r.height() != size {
        return Err(Error::shape(
            alloc::format!("{size}x{size} patch"),
            alloc::format!("{}x{}", r.width(), r.height()),
        ));
    }
    Ok(())
}

fn mean_abs(a: &Tensor, b: &Tensor) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// `d/dx mean|x - target|`, scaled by `weight`.
fn l1_grad(x: &Tensor, target: &Tensor, weight: f64) -> Tensor {
    let n = x.len() as f64;
    let mut d = x.clone();
    for (v, t) in d.data.iter_mut().zip(&target.data) {
        let diff = *v - t;
        *v = if diff > 0.0 {
            weight / n
        } else if diff < 0.0 {
            -weight / n
        } else {
            0.0
        };
    }
    d
}

/// Cycle-consistency loss: per-image mean absolute reconstruction error,
/// averaged over each batch, summed over both directions.
pub fn cycle_loss(a_batch: &[Tensor], b_batch: &[Tensor], model: &TranslationModel) -> f64 {
    cycle_loss_with(a_batch, b_batch, &model.g_ab, &model.g_ab.params, &model.g_ba, &model.g_ba.params)
}

pub fn cycle_loss_with(a_batch: &[Tensor], b_batch: &[Tensor], g_ab: &Generator, p_ab: &[f64], g_ba: &Generator, p_ba: &[f64]) -> f64 {
    let mut la = 0.0;
    for a in a_batch {
        let rec = g_ba.forward_with(p_ba, &g_ab.forward_with(p_ab, a));
        la += mean_abs(&rec, a);
    }
    let mut lb = 0.0;
    for b in b_batch {
        let rec = g_ab.forward_with(p_ab, &g_ba.forward_with(p_ba, b));
        lb += mean_abs(&rec, b);
    }
    la / a_batch.len().max(1) as f64 + lb / b_batch.len().max(1) as f64
}

/// Analytic gradient of [`cycle_loss`] with respect to both generators'
/// parameters. Returns `(loss, grad_ab, grad_ba)`.
pub fn cycle_loss_gradient(a_batch: &[Tensor], b_batch: &[Tensor], model: &TranslationModel) -> (f64, Vec<f64>, Vec<f64>) {
    let (g_ab, g_ba) = (&model.g_ab, &model.g_ba);
    let mut grad_ab = vec![0.0; g_ab.param_count()];
    let mut grad_ba = vec![0.0; g_ba.param_count()];
    let loss = cycle_direction(a_batch, g_ab, &mut grad_ab, g_ba, &mut grad_ba)
        + cycle_direction(b_batch, g_ba, &mut grad_ba, g_ab, &mut grad_ab);
    (loss, grad_ab, grad_ba)
}

fn cycle_direction(batch: &[Tensor], fwd: &Generator, fwd_grad: &mut [f64], back: &Generator, back_grad: &mut [f64]) -> f64 {
    let w = 1.0 / batch.len().max(1) as f64;
    let mut loss = 0.0;
    for x in batch {
        let (mid, c1) = fwd.forward_cached(&fwd.params, x);
        let (rec, c2) = back.forward_cached(&back.params, &mid);
        loss += w * mean_abs(&rec, x);
        let dmid = back.backward(&back.params, &c2, &l1_grad(&rec, x, w), back_grad);
        fwd.backward(&fwd.params, &c1, &dmid, fwd_grad);
    }
    loss
}

/// Translate a patch from domain A into domain B. Output values are clamped
/// to the valid range; dimensions must be divisible by the generator's
/// downsampling factor.
pub fn translate(patch: &Raster, model: &TranslationModel) -> Result<Raster> {
    let f = model.downsampling_factor();
    if patch.width() == 0 || patch.height() == 0 || patch.width() % f != 0 || patch.height() % f != 0 {
        return Err(Error::IndivisibleSize {
            width: patch.width(),
            height: patch.height(),
            divisor: f,
        });
    }
    let x = Tensor::from_raster(patch);
    Ok(model.g_ab.forward(&x).to_raster())
}

pub fn train_translation(
    domain_a: &[Raster],
    domain_b: &[Raster],
    cfg: &TranslationConfig,
) -> Result<(TranslationModel, TranslationHistory)> {
    cfg.validate()?;
    if domain_a.is_empty() {
        return Err(Error::Empty("domain A"));
    }
    if domain_b.is_empty() {
        return Err(Error::Empty("domain B"));
    }
    for r in domain_a.iter().chain(domain_b) {
        check_patch(r, cfg.patch_size)?;
    }
    let a: Vec<Tensor> = domain_a.iter().map(Tensor::from_raster).collect();
    let b: Vec<Tensor> = domain_b.iter().map(Tensor::from_raster).collect();

    let mut model = TranslationModel::new(cfg.clone())?;
    let mut rng = rng::stream(cfg.seed, 2);
    let new_adam = |n: usize| Adam::new(n, cfg.learning_rate, cfg.beta1, 0.999);
    let mut opt_ab = new_adam(model.g_ab.param_count());
    let mut opt_ba = new_adam(model.g_ba.param_count());
    let mut opt_da = new_adam(model.d_a.params.len());
    let mut opt_db = new_adam(model.d_b.params.len());
    let mut pool_a = ImagePool::new(cfg.image_pool_size);
    let mut pool_b = ImagePool::new(cfg.image_pool_size);
    let mut scratch_d = vec![0.0; model.d_a.params.len().max(model.d_b.params.len())];

    let initial_cycle = cycle_loss(&a, &b, &model);
    let steps = a.len().max(b.len());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order_a: Vec<usize> = (0..a.len()).collect();
    let mut order_b: Vec<usize> = (0..b.len()).collect();

    for epoch in 0..cfg.epochs {
        order_a.shuffle(&mut rng);
        order_b.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for step in 0..steps {
            let real_a = &a[order_a[step % a.len()]];
            let real_b = &b[order_b[step % b.len()]];

            // generators
            let mut grad_ab = vec![0.0; model.g_ab.param_count()];
            let mut grad_ba = vec![0.0; model.g_ba.param_count()];
            let (fake_b, c_ab) = model.g_ab.forward_cached(&model.g_ab.params, real_a);
            let (rec_a, c_aba) = model.g_ba.forward_cached(&model.g_ba.params, &fake_b);
            let (fake_a, c_ba) = model.g_ba.forward_cached(&model.g_ba.params, real_b);
            let (rec_b, c_bab) = model.g_ab.forward_cached(&model.g_ab.params, &fake_a);

            scratch_d.fill(0.0);
            let (adv_ab, mut d_fake_b) = model.d_b.lsgan(&model.d_b.params, &fake_b, 1.0, 1.0, &mut scratch_d, true);
            scratch_d.fill(0.0);
            let (adv_ba, mut d_fake_a) = model.d_a.lsgan(&model.d_a.params, &fake_a, 1.0, 1.0, &mut scratch_d, true);

            let d_rec_a = l1_grad(&rec_a, real_a, cfg.cycle_weight);
            d_fake_b.add_assign(&model.g_ba.backward(&model.g_ba.params, &c_aba, &d_rec_a, &mut grad_ba));
            model.g_ab.backward(&model.g_ab.params, &c_ab, &d_fake_b, &mut grad_ab);

            let d_rec_b = l1_grad(&rec_b, real_b, cfg.cycle_weight);
            d_fake_a.add_assign(&model.g_ab.backward(&model.g_ab.params, &c_bab, &d_rec_b, &mut grad_ab));
            model.g_ba.backward(&model.g_ba.params, &c_ba, &d_fake_a, &mut grad_ba);

            opt_ab.step(&mut model.g_ab.params, &grad_ab);
            opt_ba.step(&mut model.g_ba.params, &grad_ba);

            // discriminators
            let pooled_b = pool_b.query(fake_b, &mut rng);
            let pooled_a = pool_a.query(fake_a, &mut rng);
            let mut grad_db = vec![0.0; model.d_b.params.len()];
            let (real_lb, _) = model.d_b.lsgan(&model.d_b.params, real_b, 1.0, 0.5, &mut grad_db, false);
            let (fake_lb, _) = model.d_b.lsgan(&model.d_b.params, &pooled_b, 0.0, 0.5, &mut grad_db, false);
            opt_db.step(&mut model.d_b.params, &grad_db);
            let mut grad_da = vec![0.0; model.d_a.params.len()];
            let (real_la, _) = model.d_a.lsgan(&model.d_a.params, real_a, 1.0, 0.5, &mut grad_da, false);
            let (fake_la, _) = model.d_a.lsgan(&model.d_a.params, &pooled_a, 0.0, 0.5, &mut grad_da, false);
            opt_da.step(&mut model.d_a.params, &grad_da);

            sums[0] += adv_ab;
            sums[1] += adv_ba;
            sums[2] += 0.5 * (real_la + fake_la);
            sums[3] += 0.5 * (real_lb + fake_lb);
        }
        let n = steps as f64;
        epochs.push(TranslationEpoch {
            epoch: epoch + 1,
            adv_ab: sums[0] / n,
            adv_ba: sums[1] / n,
            disc_a: sums[2] / n,
            disc_b: sums[3] / n,
            cycle: cycle_loss(&a, &b, &model),
        });
    }
    Ok((
        model,
        TranslationHistory {
            initial_cycle,
            epochs,
        },
    ))
}
