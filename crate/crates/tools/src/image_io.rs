//! 8-bit RGB image files to and from [`Raster`].

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};
use mitosis_core::Raster;

use crate::{Error, Result};

pub fn raster_from_rgb8(img: &RgbImage) -> Raster {
    let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Raster::from_vec(img.width() as usize, img.height() as usize, data).expect("buffer sized by image")
}

/// Quantize to 8 bits, rounding to nearest.
pub fn raster_to_rgb8(r: &Raster) -> RgbImage {
    let buf: Vec<u8> = r.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    ImageBuffer::<Rgb<u8>, _>::from_raw(r.width() as u32, r.height() as u32, buf).expect("buffer sized by raster")
}

/// Any format the `image` crate decodes here (PNG, TIFF), converted to RGB.
pub fn load_raster(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(raster_from_rgb8(&img.to_rgb8()))
}

pub fn save_png(path: &Path, r: &Raster) -> Result<()> {
    raster_to_rgb8(r)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
