//! Allocation-only core of a three-stage mitotic figure detector.
//!
//! The stages are unpaired stain translation into a single reference scanner
//! domain, anchor-based candidate detection on fixed-size tiles, and binary
//! classification of fixed-size crops around each candidate center. The
//! surrounding machinery (tiling, frame transforms, slide-level splitting,
//! distance-matched F1, checkpoint container, synthetic fixtures) lives here
//! too. Nothing in this crate touches the filesystem or the clock; the
//! `mitosis-tools` crate carries IO, file formats and the command line.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod checkpoint;
pub mod classification;
pub mod data;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod split;
pub mod tiling;
pub mod translation;

pub use error::{Error, Result};
pub use geometry::{BoundingBox, Detection, FrameTransform, Point};
pub use raster::Raster;
