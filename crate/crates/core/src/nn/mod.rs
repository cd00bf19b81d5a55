//! Minimal dense-tensor layers with hand-written backward passes.
//!
//! Every network keeps its parameters in one flat `Vec<f64>`; layers only
//! remember offsets into it. That keeps optimizers, checkpoints and
//! finite-difference checks oblivious to architecture.

mod layers;
mod optim;
mod tensor;

pub use layers::{Chain, Conv2d, Linear, Op, ParamLayout};
pub use optim::Adam;
pub use tensor::Tensor;

use alloc::vec::Vec;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        libm::exp(x)
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| libm::exp(v - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Largest relative disagreement between `analytic` and central finite
/// differences of `loss` at the coordinates in `indices`.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn gradient_check(
    params: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss(&probe);
        probe[i] = orig - step;
        let down = loss(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
