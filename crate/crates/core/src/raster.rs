//! Interleaved RGB rasters with channel values in `[0, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Reflect an index into `0..n` without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`). Out-of-range indices far from the edge keep
/// bouncing.
pub fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    if m >= n as i64 {
        (period - m) as usize
    } else {
        m as usize
    }
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = vec![0.0; width * height * 3];
        for px in data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(
                alloc::format!("{} samples", width * height * 3),
                alloc::format!("{} samples", data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut r = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                r.set(x, y, f(x, y));
            }
        }
        r
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixel at signed coordinates, mirror-reflected at the borders.
    pub fn get_reflected(&self, x: i64, y: i64) -> [f32; 3] {
        self.get(reflect_index(x, self.width), reflect_index(y, self.height))
    }

    /// `width x height` window whose top-left corner sits at `(x0, y0)`;
    /// samples outside the raster are mirror-reflected.
    pub fn crop_reflect(&self, x0: i64, y0: i64, width: usize, height: usize) -> Raster {
        let mut out = Raster::new(width, height);
        for y in 0..height {
            let sy = reflect_index(y0 + y as i64, self.height);
            for x in 0..width {
                let sx = reflect_index(x0 + x as i64, self.width);
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }

    /// Copy `src` into `self` with its top-left corner at `(x0, y0)`,
    /// skipping the part that falls outside.
    pub fn paste(&mut self, src: &Raster, x0: i64, y0: i64) {
        for y in 0..src.height {
            let dy = y0 + y as i64;
            if dy < 0 || dy >= self.height as i64 {
                continue;
            }
            for x in 0..src.width {
                let dx = x0 + x as i64;
                if dx < 0 || dx >= self.width as i64 {
                    continue;
                }
                self.set(dx as usize, dy as usize, src.get(x, y));
            }
        }
    }

    /// Upside-down flip (rows reversed).
    pub fn flip_vertical(&self) -> Raster {
        Raster::from_fn(self.width, self.height, |x, y| self.get(x, self.height - 1 - y))
    }

    /// Mirror flip (columns reversed).
    pub fn flip_horizontal(&self) -> Raster {
        Raster::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Rotate by 90 degrees counter-clockwise, `quarter_turns` times.
    pub fn rotate90(&self, quarter_turns: u32) -> Raster {
        let mut out = self.clone();
        for _ in 0..quarter_turns % 4 {
            let src = out;
            out = Raster::from_fn(src.height, src.width, |x, y| src.get(src.width - 1 - y, x));
        }
        out
    }

    /// Shift content by `(dx, dy)` pixels; vacated pixels are mirror-filled.
    pub fn shift_reflect(&self, dx: i64, dy: i64) -> Raster {
        self.crop_reflect(-dx, -dy, self.width, self.height)
    }

    /// Bilinear resampling with half-pixel centers.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Raster {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Raster::from_fn(width, height, |x, y| {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let (x0, y0) = (fx as usize, fy as usize);
            let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
            let (tx, ty) = ((fx - x0 as f64) as f32, (fy - y0 as f64) as f32);
            let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
            let mut px = [0.0; 3];
            for ch in 0..3 {
                let top = a[ch] * (1.0 - tx) + b[ch] * tx;
                let bottom = c[ch] * (1.0 - tx) + d[ch] * tx;
                px[ch] = top * (1.0 - ty) + bottom * ty;
            }
            px
        })
    }

    pub fn luminance(&self, x: usize, y: usize) -> f32 {
        let [r, g, b] = self.get(x, y);
        0.299 * r + 0.587 * g + 0.114 * b
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let mut sum = [0.0f64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c] as f64;
            }
        }
        let n = (self.width * self.height).max(1) as f64;
        sum.map(|s| s / n)
    }

    pub fn mean_abs_diff(&self, other: &Raster) -> f64 {
        let n = self.data.len().max(1) as f64;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum::<f64>()
            / n
    }
}
