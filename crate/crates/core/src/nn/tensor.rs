use alloc::vec;
use alloc::vec::Vec;

use crate::raster::Raster;

/// Channel-major `c x h x w` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.c, other.h, other.w)
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    /// Raster values in `[0, 1]` mapped to `[-1, 1]`.
    pub fn from_raster(r: &Raster) -> Self {
        let (h, w) = (r.height(), r.width());
        let mut t = Tensor::zeros(3, h, w);
        let hw = h * w;
        for (i, px) in r.data().chunks_exact(3).enumerate() {
            for ch in 0..3 {
                t.data[ch * hw + i] = px[ch] as f64 * 2.0 - 1.0;
            }
        }
        t
    }

    /// Inverse of [`Tensor::from_raster`], clamping to the valid range.
    pub fn to_raster(&self) -> Raster {
        assert_eq!(self.c, 3);
        let hw = self.h * self.w;
        let mut data = vec![0.0f32; hw * 3];
        for i in 0..hw {
            for ch in 0..3 {
                let v = self.data[ch * hw + i].clamp(-1.0, 1.0);
                data[i * 3 + ch] = ((v + 1.0) / 2.0) as f32;
            }
        }
        Raster::from_vec(self.w, self.h, data).expect("sized by construction")
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.h * self.w;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}
