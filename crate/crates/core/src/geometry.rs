//! Points, boxes, overlap and the patch/slide frame transforms.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }

    /// Integer pixel coordinates under round-half-up (`floor(v + 0.5)`), the
    /// single rounding policy used wherever a sub-pixel position has to land
    /// on a pixel.
    pub fn round_half_up(&self) -> (i64, i64) {
        (round_half_up(self.x), round_half_up(self.y))
    }
}

pub fn round_half_up(v: f64) -> i64 {
    libm::floor(v + 0.5) as i64
}

/// Axis-aligned box with `x_min < x_max` and `y_min < y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn from_center(center: Point, width: f64, height: f64) -> Result<Self> {
        Self::new(
            center.x - width / 2.0,
            center.y - height / 2.0,
            center.x + width / 2.0,
            center.y + height / 2.0,
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        box_center(self)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clip to `[0, width] x [0, height]`. `None` when nothing is left.
    pub fn clip(&self, width: f64, height: f64) -> Option<BoundingBox> {
        BoundingBox::new(
            self.x_min.clamp(0.0, width),
            self.y_min.clamp(0.0, height),
            self.x_max.clamp(0.0, width),
            self.y_max.clamp(0.0, height),
        )
        .ok()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Map a box expressed in a child frame into the parent frame of `t`.
    pub fn to_slide(&self, t: &FrameTransform) -> BoundingBox {
        let a = t.to_slide(Point::new(self.x_min, self.y_min));
        let b = t.to_slide(Point::new(self.x_max, self.y_max));
        BoundingBox {
            x_min: a.x,
            y_min: a.y,
            x_max: b.x,
            y_max: b.y,
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
    pub class_id: u32,
}

impl Detection {
    pub fn new(bbox: BoundingBox, score: f64, class_id: u32) -> Self {
        debug_assert!((0.0..=1.0).contains(&score));
        Self {
            bbox,
            score,
            class_id,
        }
    }
}

/// Placement of a patch frame inside the slide frame.
///
/// A patch point `p` lands at `offset + p * scale` in the slide, so `scale`
/// is the number of slide pixels covered by one patch pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTransform {
    pub offset: Point,
    pub scale: f64,
}

impl FrameTransform {
    pub fn new(offset: Point, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::config("frame scale must be positive"));
        }
        Ok(Self { offset, scale })
    }

    pub const fn translation(x: f64, y: f64) -> Self {
        Self {
            offset: Point::new(x, y),
            scale: 1.0,
        }
    }

    pub fn to_slide(&self, p: Point) -> Point {
        to_slide(p, self)
    }

    pub fn to_patch(&self, p: Point) -> Point {
        to_patch(p, self)
    }

    /// Transform of a frame nested inside `self`: `child` maps into `self`'s
    /// patch frame, the result maps straight into the slide.
    pub fn compose(&self, child: &FrameTransform) -> FrameTransform {
        FrameTransform {
            offset: self.to_slide(child.offset),
            scale: self.scale * child.scale,
        }
    }
}

pub fn to_slide(p: Point, t: &FrameTransform) -> Point {
    Point::new(t.offset.x + p.x * t.scale, t.offset.y + p.y * t.scale)
}

pub fn to_patch(p: Point, t: &FrameTransform) -> Point {
    Point::new((p.x - t.offset.x) / t.scale, (p.y - t.offset.y) / t.scale)
}

pub fn box_center(b: &BoundingBox) -> Point {
    Point::new((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0)
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Detection order used by NMS: descending score, ties broken by lower
/// `x_min` and then lower `y_min`.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then_with(|| a.bbox.y_min.total_cmp(&b.bbox.y_min))
}

/// Class-agnostic greedy non-maximum suppression.
///
/// A detection survives if its IoU with every higher-ranked survivor is at
/// most `iou_threshold`. The result is sorted by [`detection_order`].
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| detection_order(a, b));

    let mut kept: Vec<Detection> = Vec::new();
    for det in order {
        if kept.iter().all(|k| iou(&k.bbox, &det.bbox) <= iou_threshold) {
            kept.push(*det);
        }
    }
    kept
}
