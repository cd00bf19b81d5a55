//! Decomposition of a slide region into square patches.
//!
//! Grids are row-major. Along an axis at least as long as the tile, the last
//! tile is shifted inward so every tile lies inside the extent. Along an
//! axis shorter than the tile a single tile is placed with the content
//! centered: its origin is negative by the leading pad and the missing
//! samples are mirror-reflected on extraction.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FrameTransform;
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub x: i64,
    pub y: i64,
    pub size: usize,
    /// Pyramid level; only level 0 (full resolution) is produced here.
    pub level: u32,
}

impl TileSpec {
    pub fn transform(&self) -> FrameTransform {
        FrameTransform::translation(self.x as f64, self.y as f64)
    }

    pub fn contains(&self, px: i64, py: i64) -> bool {
        px >= self.x && py >= self.y && px < self.x + self.size as i64 && py < self.y + self.size as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub stride: usize,
    pub tiles: Vec<TileSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TissueConfig {
    /// Luminance below this fraction of full scale counts as tissue.
    pub background_threshold: f64,
    /// Tiles with a smaller tissue fraction are skipped at inference.
    pub min_tissue_fraction: f64,
}

impl Default for TissueConfig {
    fn default() -> Self {
        Self {
            background_threshold: 0.85,
            min_tissue_fraction: 0.05,
        }
    }
}

fn leading_pad(extent: usize, tile: usize) -> i64 {
    ((tile - extent) / 2) as i64
}

/// Tile start positions along one axis.
pub fn axis_positions(extent: usize, tile: usize, stride: usize) -> Vec<i64> {
    if extent < tile {
        return alloc::vec![-leading_pad(extent, tile)];
    }
    let last = extent - tile;
    let mut out = Vec::new();
    let mut p = 0;
    loop {
        out.push(p as i64);
        if p >= last {
            break;
        }
        p = (p + stride).min(last);
    }
    out
}

pub fn build_grid(width: usize, height: usize, tile_size: usize, stride: usize) -> Result<TileGrid> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidExtent { width, height });
    }
    if tile_size == 0 || stride == 0 || stride > tile_size {
        return Err(Error::InvalidTiling {
            tile: tile_size,
            stride,
        });
    }
    let xs = axis_positions(width, tile_size, stride);
    let ys = axis_positions(height, tile_size, stride);
    let tiles = ys
        .iter()
        .flat_map(|&y| {
            xs.iter().map(move |&x| TileSpec {
                x,
                y,
                size: tile_size,
                level: 0,
            })
        })
        .collect();
    Ok(TileGrid {
        width,
        height,
        tile_size,
        stride,
        tiles,
    })
}

fn axis_fits(origin: i64, size: usize, extent: usize) -> bool {
    if extent >= size {
        origin >= 0 && origin + size as i64 <= extent as i64
    } else {
        origin == -leading_pad(extent, size)
    }
}

pub fn check_within(spec: &TileSpec, width: usize, height: usize) -> Result<()> {
    if spec.size == 0 || !axis_fits(spec.x, spec.size, width) || !axis_fits(spec.y, spec.size, height) {
        return Err(Error::TileOutOfBounds {
            x: spec.x,
            y: spec.y,
            size: spec.size,
            width,
            height,
        });
    }
    Ok(())
}

pub fn extract_tile(image: &Raster, spec: &TileSpec) -> Result<Raster> {
    check_within(spec, image.width(), image.height())?;
    Ok(image.crop_reflect(spec.x, spec.y, spec.size, spec.size))
}

/// Write a tile back at its origin; the padded margin is dropped.
pub fn embed_tile(image: &mut Raster, tile: &Raster, spec: &TileSpec) -> Result<()> {
    check_within(spec, image.width(), image.height())?;
    if tile.width() != spec.size || tile.height() != spec.size {
        return Err(Error::shape(
            alloc::format!("{0}x{0}", spec.size),
            alloc::format!("{}x{}", tile.width(), tile.height()),
        ));
    }
    image.paste(tile, spec.x, spec.y);
    Ok(())
}

pub fn tissue_fraction(tile: &Raster, background_threshold: f64) -> f64 {
    let n = tile.width() * tile.height();
    if n == 0 {
        return 0.0;
    }
    let mut tissue = 0usize;
    for y in 0..tile.height() {
        for x in 0..tile.width() {
            if (tile.luminance(x, y) as f64) < background_threshold {
                tissue += 1;
            }
        }
    }
    tissue as f64 / n as f64
}

/// Child tiles covering a parent patch, expressed in the slide frame.
pub fn split_to_detection_tiles(patch: &TileSpec, det_tile: usize, det_stride: usize) -> Result<Vec<TileSpec>> {
    if det_tile > patch.size {
        return Err(Error::InvalidTiling {
            tile: det_tile,
            stride: det_stride,
        });
    }
    let local = build_grid(patch.size, patch.size, det_tile, det_stride)?;
    Ok(local
        .tiles
        .into_iter()
        .map(|t| TileSpec {
            x: patch.x + t.x,
            y: patch.y + t.y,
            size: det_tile,
            level: patch.level,
        })
        .collect())
}
