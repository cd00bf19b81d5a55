use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;

/// Hands out offsets into a flat parameter vector.
#[derive(Debug, Default, Clone)]
pub struct ParamLayout {
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, n: usize) -> usize {
        let off = self.len;
        self.len += n;
        off
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn uniform(params: &mut [f64], rng: &mut impl Rng, bound: f64) {
    for p in params {
        *p = if bound == 0.0 {
            0.0
        } else {
            rng.random_range(-bound..bound)
        };
    }
}

/// Stride-1 convolution with zero "same" padding (odd kernels only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    w_off: usize,
    b_off: usize,
}

impl Conv2d {
    pub fn new(layout: &mut ParamLayout, in_c: usize, out_c: usize, k: usize) -> Self {
        assert!(k % 2 == 1 && k <= 7, "odd kernel up to 7 required");
        let w_off = layout.alloc(out_c * in_c * k * k);
        let b_off = layout.alloc(out_c);
        Self {
            in_c,
            out_c,
            k,
            w_off,
            b_off,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }

    pub fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w_off..self.w_off + self.weight_len()]
    }

    pub fn weights_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.w_off..self.w_off + self.weight_len()]
    }

    pub fn bias_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.b_off..self.b_off + self.out_c]
    }

    /// He-uniform weights for a leaky-ReLU follower, zero bias.
    pub fn init_he(&self, p: &mut [f64], rng: &mut impl Rng) {
        let fan_in = (self.in_c * self.k * self.k) as f64;
        let bound = libm::sqrt(6.0 / (1.04 * fan_in));
        uniform(self.weights_mut(p), rng, bound);
        self.bias_mut(p).fill(0.0);
    }

    pub fn init_uniform(&self, p: &mut [f64], rng: &mut impl Rng, bound: f64, bias: f64) {
        uniform(self.weights_mut(p), rng, bound);
        self.bias_mut(p).fill(bias);
    }

    /// Calls `f(ky, kx, out_start, in_start, len)` for every row segment where
    /// tap `(ky, kx)` overlaps the input.
    #[inline]
    fn for_each_tap(&self, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let pad = (self.k / 2) as isize;
        for ky in 0..self.k {
            let dy = ky as isize - pad;
            let y0 = (-dy).max(0) as usize;
            let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
            for kx in 0..self.k {
                let dx = kx as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in y0..y1 {
                    let out_start = y * w + x0;
                    let in_start = ((y as isize + dy) as usize) * w + (x0 as isize + dx) as usize;
                    f(ky, kx, out_start, in_start, x1 - x0);
                }
            }
        }
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> Tensor {
        debug_assert_eq!(x.c, self.in_c);
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let mut out = Tensor::zeros(self.out_c, h, w);
        let weights = self.weights(p);
        let kk = self.k * self.k;
        for oc in 0..self.out_c {
            let bias = p[self.b_off + oc];
            let o_plane = &mut out.data[oc * hw..(oc + 1) * hw];
            o_plane.fill(bias);
            for ic in 0..self.in_c {
                let i_plane = &x.data[ic * hw..(ic + 1) * hw];
                let wbase = (oc * self.in_c + ic) * kk;
                self.for_each_tap(h, w, |ky, kx, os, is, n| {
                    let wv = weights[wbase + ky * self.k + kx];
                    let o = &mut o_plane[os..os + n];
                    let i = &i_plane[is..is + n];
                    for (a, b) in o.iter_mut().zip(i) {
                        *a += wv * b;
                    }
                });
            }
        }
        out
    }

    /// Accumulates parameter gradients into `g`; returns the input gradient
    /// when `need_dx` is set (otherwise an empty tensor).
    pub fn backward(&self, p: &[f64], x: &Tensor, dy: &Tensor, g: &mut [f64], need_dx: bool) -> Tensor {
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let kk = self.k * self.k;
        let mut dx = if need_dx {
            Tensor::zeros(self.in_c, h, w)
        } else {
            Tensor::zeros(0, 0, 0)
        };
        let weights = self.weights(p);
        for oc in 0..self.out_c {
            let d_plane = &dy.data[oc * hw..(oc + 1) * hw];
            g[self.b_off + oc] += d_plane.iter().sum::<f64>();
            for ic in 0..self.in_c {
                let i_plane = &x.data[ic * hw..(ic + 1) * hw];
                let widx = (oc * self.in_c + ic) * kk;
                let mut dw = [0.0f64; 49];
                let mut dx_plane = if need_dx {
                    Some(&mut dx.data[ic * hw..(ic + 1) * hw])
                } else {
                    None
                };
                self.for_each_tap(h, w, |ky, kx, os, is, n| {
                    let t = ky * self.k + kx;
                    let d = &d_plane[os..os + n];
                    let i = &i_plane[is..is + n];
                    let mut acc = 0.0;
                    for (a, b) in d.iter().zip(i) {
                        acc += a * b;
                    }
                    dw[t] += acc;
                    if let Some(dxp) = dx_plane.as_deref_mut() {
                        let wv = weights[widx + t];
                        for (o, a) in dxp[is..is + n].iter_mut().zip(d) {
                            *o += wv * a;
                        }
                    }
                });
                for t in 0..kk {
                    g[self.w_off + widx + t] += dw[t];
                }
            }
        }
        dx
    }
}

/// Fully connected layer over a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_n: usize,
    pub out_n: usize,
    w_off: usize,
    b_off: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, in_n: usize, out_n: usize) -> Self {
        let w_off = layout.alloc(in_n * out_n);
        let b_off = layout.alloc(out_n);
        Self {
            in_n,
            out_n,
            w_off,
            b_off,
        }
    }

    pub fn init(&self, p: &mut [f64], rng: &mut impl Rng) {
        let bound = 1.0 / libm::sqrt(self.in_n as f64);
        uniform(&mut p[self.w_off..self.w_off + self.in_n * self.out_n], rng, bound);
        p[self.b_off..self.b_off + self.out_n].fill(0.0);
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.out_n)
            .map(|o| {
                let row = &p[self.w_off + o * self.in_n..self.w_off + (o + 1) * self.in_n];
                p[self.b_off + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let mut dx = alloc::vec![0.0; self.in_n];
        for o in 0..self.out_n {
            g[self.b_off + o] += dy[o];
            for i in 0..self.in_n {
                g[self.w_off + o * self.in_n + i] += dy[o] * x[i];
                dx[i] += dy[o] * p[self.w_off + o * self.in_n + i];
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Op {
    Conv(Conv2d),
    LeakyRelu(f64),
    /// 2x2 mean pooling, stride 2.
    AvgPool2,
    /// Nearest-neighbour 2x upsampling.
    Upsample2,
}

impl Op {
    fn forward(&self, p: &[f64], x: &Tensor) -> Tensor {
        match *self {
            Op::Conv(c) => c.forward(p, x),
            Op::LeakyRelu(slope) => {
                let mut y = x.clone();
                for v in &mut y.data {
                    if *v < 0.0 {
                        *v *= slope;
                    }
                }
                y
            }
            Op::AvgPool2 => {
                let (h, w) = (x.h / 2, x.w / 2);
                let mut y = Tensor::zeros(x.c, h, w);
                for c in 0..x.c {
                    for i in 0..h {
                        for j in 0..w {
                            let at = |a: usize, b: usize| x.data[(c * x.h + a) * x.w + b];
                            y.data[(c * h + i) * w + j] =
                                0.25 * (at(2 * i, 2 * j) + at(2 * i, 2 * j + 1) + at(2 * i + 1, 2 * j) + at(2 * i + 1, 2 * j + 1));
                        }
                    }
                }
                y
            }
            Op::Upsample2 => {
                let (h, w) = (x.h * 2, x.w * 2);
                let mut y = Tensor::zeros(x.c, h, w);
                for c in 0..x.c {
                    for i in 0..h {
                        for j in 0..w {
                            y.data[(c * h + i) * w + j] = x.data[(c * x.h + i / 2) * x.w + j / 2];
                        }
                    }
                }
                y
            }
        }
    }

    fn backward(&self, p: &[f64], x: &Tensor, dy: &Tensor, g: &mut [f64], need_dx: bool) -> Tensor {
        match *self {
            Op::Conv(c) => c.backward(p, x, dy, g, need_dx),
            Op::LeakyRelu(slope) => {
                let mut dx = dy.clone();
                for (d, v) in dx.data.iter_mut().zip(&x.data) {
                    if *v < 0.0 {
                        *d *= slope;
                    }
                }
                dx
            }
            Op::AvgPool2 => {
                let mut dx = Tensor::zeros_like(x);
                for c in 0..x.c {
                    for i in 0..dy.h {
                        for j in 0..dy.w {
                            let d = 0.25 * dy.data[(c * dy.h + i) * dy.w + j];
                            for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                dx.data[(c * x.h + 2 * i + a) * x.w + 2 * j + b] = d;
                            }
                        }
                    }
                }
                dx
            }
            Op::Upsample2 => {
                let mut dx = Tensor::zeros_like(x);
                for c in 0..x.c {
                    for i in 0..dy.h {
                        for j in 0..dy.w {
                            dx.data[(c * x.h + i / 2) * x.w + j / 2] += dy.data[(c * dy.h + i) * dy.w + j];
                        }
                    }
                }
                dx
            }
        }
    }
}

/// Straight sequence of ops.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub ops: Vec<Op>,
}

impl Chain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, op: Op) -> &mut Self {
        self.ops.push(op);
        self
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.ops.iter().filter_map(|op| match op {
            Op::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for op in &self.ops {
            cur = op.forward(p, &cur);
        }
        cur
    }

    /// Forward pass that also returns each op's input, for [`Chain::backward`].
    pub fn forward_cached(&self, p: &[f64], x: &Tensor) -> (Tensor, Vec<Tensor>) {
        let mut inputs = Vec::with_capacity(self.ops.len());
        let mut cur = x.clone();
        for op in &self.ops {
            let next = op.forward(p, &cur);
            inputs.push(cur);
            cur = next;
        }
        (cur, inputs)
    }

    pub fn backward(&self, p: &[f64], inputs: &[Tensor], dy: Tensor, g: &mut [f64], need_dx: bool) -> Tensor {
        let mut grad = dy;
        for (i, op) in self.ops.iter().enumerate().rev() {
            let want = need_dx || i > 0;
            grad = op.backward(p, &inputs[i], &grad, g, want);
        }
        grad
    }
}
