//! Dataset records and the synthetic two-domain fixture generator.
//!
//! Slides come from four scanners. Three of them carry mitosis and
//! hard-negative annotations; the reference scanner (the translation
//! target domain) never does.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Point};
use crate::raster::Raster;
use crate::rng;

/// Side of the box that replaces a point annotation.
pub const POINT_BOX_SIZE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScannerId {
    #[serde(rename = "XR")]
    Xr,
    #[serde(rename = "S360")]
    S360,
    #[serde(rename = "CS2")]
    Cs2,
    #[serde(rename = "GT450")]
    Gt450,
}

impl ScannerId {
    pub const ALL: [ScannerId; 4] = [ScannerId::Xr, ScannerId::S360, ScannerId::Cs2, ScannerId::Gt450];
    pub const ANNOTATED: [ScannerId; 3] = [ScannerId::Xr, ScannerId::S360, ScannerId::Cs2];

    /// The unannotated target domain of stain translation.
    pub fn is_reference(self) -> bool {
        self == ScannerId::Gt450
    }

    pub fn name(self) -> &'static str {
        match self {
            ScannerId::Xr => "XR",
            ScannerId::S360 => "S360",
            ScannerId::Cs2 => "CS2",
            ScannerId::Gt450 => "GT450",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Mitosis,
    HardNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub slide_id: String,
    pub bbox: BoundingBox,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideEntry {
    pub slide_id: String,
    pub scanner: ScannerId,
    /// Image path, relative to the manifest file.
    pub image: String,
    pub width: usize,
    pub height: usize,
}

/// Annotation as written in a manifest: either a box or a center point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub slide_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawManifest {
    pub slides: Vec<SlideEntry>,
    #[serde(default)]
    pub annotations: Vec<AnnotationRecord>,
}

/// Validated dataset index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub slides: Vec<SlideEntry>,
    pub annotations: Vec<Annotation>,
}

impl DatasetManifest {
    pub fn from_raw(raw: RawManifest) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (index, s) in raw.slides.iter().enumerate() {
            if s.slide_id.is_empty() {
                return Err(Error::Record {
                    index,
                    reason: "slide: empty slide_id".into(),
                });
            }
            if s.width == 0 || s.height == 0 {
                return Err(Error::Record {
                    index,
                    reason: format!("slide {:?}: zero extent", s.slide_id),
                });
            }
            if !seen.insert(s.slide_id.as_str()) {
                return Err(Error::Record {
                    index,
                    reason: format!("slide: duplicate slide_id {:?}", s.slide_id),
                });
            }
        }
        let mut annotations = Vec::with_capacity(raw.annotations.len());
        for (index, a) in raw.annotations.iter().enumerate() {
            let bad = |reason: String| Error::Record {
                index,
                reason: format!("annotation: {reason}"),
            };
            let slide = raw
                .slides
                .iter()
                .find(|s| s.slide_id == a.slide_id)
                .ok_or_else(|| bad(format!("unknown slide_id {:?}", a.slide_id)))?;
            if slide.scanner.is_reference() {
                return Err(bad(format!(
                    "slide {:?} is from the reference scanner {} and must not be annotated",
                    a.slide_id,
                    slide.scanner.name()
                )));
            }
            let (w, h) = (slide.width as f64, slide.height as f64);
            let bbox = match (a.bbox, a.point) {
                (Some(b), None) => {
                    let bbox = BoundingBox::try_from(b).map_err(|e| bad(format!("{e}")))?;
                    if bbox.x_min() < 0.0 || bbox.y_min() < 0.0 || bbox.x_max() > w || bbox.y_max() > h {
                        return Err(bad(format!("box {b:?} leaves the {w}x{h} slide")));
                    }
                    bbox
                }
                (None, Some([x, y])) => {
                    if !(x >= 0.0 && y >= 0.0 && x < w && y < h) {
                        return Err(bad(format!("point ({x}, {y}) outside the {w}x{h} slide")));
                    }
                    point_box(Point::new(x, y), w, h).map_err(|e| bad(format!("{e}")))?
                }
                _ => return Err(bad("exactly one of bbox or point is required".into())),
            };
            annotations.push(Annotation {
                slide_id: a.slide_id.clone(),
                bbox,
                label: a.label,
            });
        }
        Ok(Self {
            slides: raw.slides,
            annotations,
        })
    }

    pub fn to_raw(&self) -> RawManifest {
        RawManifest {
            slides: self.slides.clone(),
            annotations: self
                .annotations
                .iter()
                .map(|a| AnnotationRecord {
                    slide_id: a.slide_id.clone(),
                    label: a.label,
                    bbox: Some(a.bbox.to_array()),
                    point: None,
                })
                .collect(),
        }
    }

    pub fn slide(&self, id: &str) -> Option<&SlideEntry> {
        self.slides.iter().find(|s| s.slide_id == id)
    }

    pub fn annotations_for<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Annotation> + 'a {
        self.annotations.iter().filter(move |a| a.slide_id == id)
    }

    pub fn count_by_scanner(&self, scanner: ScannerId) -> usize {
        self.slides.iter().filter(|s| s.scanner == scanner).count()
    }
}

/// Fixed-size box around a point annotation, clipped to the slide.
pub fn point_box(p: Point, width: f64, height: f64) -> Result<BoundingBox> {
    let half = POINT_BOX_SIZE / 2.0;
    BoundingBox::new(
        (p.x - half).max(0.0),
        (p.y - half).max(0.0),
        (p.x + half).min(width),
        (p.y + half).min(height),
    )
}

/// Global per-channel color transform emulating one scanner's rendition
/// of the same stained tissue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StainRegime {
    pub gain: [f32; 3],
    pub offset: [f32; 3],
}

impl StainRegime {
    pub const IDENTITY: StainRegime = StainRegime {
        gain: [1.0; 3],
        offset: [0.0; 3],
    };

    pub fn for_scanner(s: ScannerId) -> Self {
        match s {
            ScannerId::Xr => StainRegime {
                gain: [1.06, 0.78, 0.92],
                offset: [0.02, -0.02, 0.06],
            },
            ScannerId::S360 => StainRegime {
                gain: [0.90, 0.92, 1.08],
                offset: [-0.04, 0.02, 0.02],
            },
            ScannerId::Cs2 => StainRegime {
                gain: [1.02, 0.86, 0.80],
                offset: [0.06, 0.00, -0.02],
            },
            ScannerId::Gt450 => StainRegime::IDENTITY,
        }
    }

    pub fn apply(&self, rgb: [f32; 3]) -> [f32; 3] {
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = (rgb[c] * self.gain[c] + self.offset[c]).clamp(0.0, 1.0);
        }
        out
    }

    pub fn apply_raster(&self, r: &Raster) -> Raster {
        Raster::from_fn(r.width(), r.height(), |x, y| self.apply(r.get(x, y)))
    }
}

const TISSUE: [f32; 3] = [0.86, 0.62, 0.78];
const NUCLEUS: [f32; 3] = [0.24, 0.10, 0.36];
const LIGHT_NUCLEUS: [f32; 3] = [0.62, 0.46, 0.70];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    pub center: Point,
    pub bbox: BoundingBox,
    pub label: Label,
}

/// Smooth stained-tissue texture in the reference color space.
pub fn render_texture(width: usize, height: usize, rng: &mut impl Rng) -> Raster {
    let waves: Vec<(f32, f32, f32, f32)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.02..0.12),
                rng.random_range(0.02..0.12),
                rng.random_range(0.0..core::f32::consts::TAU),
                rng.random_range(0.02..0.05),
            )
        })
        .collect();
    let mut r = Raster::from_fn(width, height, |x, y| {
        let mut v = 0.0f32;
        for (fx, fy, phase, amp) in &waves {
            v += amp * libm::sinf(fx * x as f32 + fy * y as f32 + phase);
        }
        [TISSUE[0] + v, TISSUE[1] + 1.2 * v, TISSUE[2] + 0.8 * v]
    });
    for px in r.data_mut().chunks_exact_mut(3) {
        let n: f32 = rng.random_range(-0.03..0.03);
        for c in px.iter_mut() {
            *c = (*c + n).clamp(0.0, 1.0);
        }
    }
    // a sprinkle of small, pale interphase nuclei
    let count = (width * height) / 900;
    for _ in 0..count {
        let c = Point::new(rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64));
        fill_ellipse(&mut r, c, 2.2, 2.2, LIGHT_NUCLEUS, 0.6);
    }
    r
}

fn blend(dst: [f32; 3], src: [f32; 3], alpha: f32) -> [f32; 3] {
    [
        dst[0] * (1.0 - alpha) + src[0] * alpha,
        dst[1] * (1.0 - alpha) + src[1] * alpha,
        dst[2] * (1.0 - alpha) + src[2] * alpha,
    ]
}

/// Paint an axis-aligned ellipse with a one-pixel soft edge.
fn fill_ellipse(r: &mut Raster, c: Point, rx: f64, ry: f64, color: [f32; 3], opacity: f32) {
    let x0 = libm::floor(c.x - rx - 1.0).max(0.0) as usize;
    let y0 = libm::floor(c.y - ry - 1.0).max(0.0) as usize;
    let x1 = (libm::ceil(c.x + rx + 1.0) as usize).min(r.width());
    let y1 = (libm::ceil(c.y + ry + 1.0) as usize).min(r.height());
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = (x as f64 + 0.5 - c.x) / rx;
            let dy = (y as f64 + 0.5 - c.y) / ry;
            let d = libm::sqrt(dx * dx + dy * dy);
            // signed distance in pixels, approximately
            let edge = (1.0 - d) * rx.min(ry);
            let a = (edge + 0.5).clamp(0.0, 1.0) as f32 * opacity;
            if a > 0.0 {
                let px = r.get(x, y);
                r.set(x, y, blend(px, color, a));
            }
        }
    }
}

fn fill_ring(r: &mut Raster, c: Point, outer: f64, thickness: f64, color: [f32; 3]) {
    let inner = outer - thickness;
    let x0 = libm::floor(c.x - outer - 1.0).max(0.0) as usize;
    let y0 = libm::floor(c.y - outer - 1.0).max(0.0) as usize;
    let x1 = (libm::ceil(c.x + outer + 1.0) as usize).min(r.width());
    let y1 = (libm::ceil(c.y + outer + 1.0) as usize).min(r.height());
    for y in y0..y1 {
        for x in x0..x1 {
            let d = libm::hypot(x as f64 + 0.5 - c.x, y as f64 + 0.5 - c.y);
            let a = ((outer - d + 0.5).clamp(0.0, 1.0) * (d - inner + 0.5).clamp(0.0, 1.0)) as f32;
            if a > 0.0 {
                let px = r.get(x, y);
                r.set(x, y, blend(px, color, a));
            }
        }
    }
}

/// Dark filled ellipse standing in for a mitotic figure.
pub fn plant_mitosis(r: &mut Raster, center: Point, rx: f64, ry: f64) -> SynthObject {
    fill_ellipse(r, center, rx, ry, NUCLEUS, 1.0);
    SynthObject {
        center,
        bbox: BoundingBox::from_center(center, 2.0 * rx, 2.0 * ry).expect("positive radii"),
        label: Label::Mitosis,
    }
}

/// Dark ring with a tissue-colored core standing in for a look-alike.
pub fn plant_ring(r: &mut Raster, center: Point, outer: f64, thickness: f64) -> SynthObject {
    fill_ring(r, center, outer, thickness, NUCLEUS);
    SynthObject {
        center,
        bbox: BoundingBox::from_center(center, 2.0 * outer, 2.0 * outer).expect("positive radius"),
        label: Label::HardNegative,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectStyle {
    pub mitosis_radius: (f64, f64),
    pub ring_radius: (f64, f64),
    pub ring_thickness: f64,
    /// Minimum center-to-center spacing between planted objects.
    pub min_spacing: f64,
    /// Minimum distance from an object center to the image border.
    pub margin: f64,
}

impl Default for ObjectStyle {
    fn default() -> Self {
        Self {
            mitosis_radius: (4.5, 6.5),
            ring_radius: (5.5, 6.5),
            ring_thickness: 2.0,
            min_spacing: 20.0,
            margin: 8.0,
        }
    }
}

/// Random positions honoring spacing and margin; may return fewer than
/// requested when the canvas is crowded.
pub fn scatter_points(
    width: usize,
    height: usize,
    n: usize,
    style: &ObjectStyle,
    avoid: &[Point],
    rng: &mut impl Rng,
) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(n);
    let (lo_x, hi_x) = (style.margin, width as f64 - style.margin);
    let (lo_y, hi_y) = (style.margin, height as f64 - style.margin);
    if lo_x >= hi_x || lo_y >= hi_y {
        return out;
    }
    let mut attempts = 0;
    while out.len() < n && attempts < 200 * (n + 1) {
        attempts += 1;
        let p = Point::new(rng.random_range(lo_x..hi_x), rng.random_range(lo_y..hi_y));
        if out.iter().chain(avoid).all(|q| q.distance(&p) >= style.min_spacing) {
            out.push(p);
        }
    }
    out
}

/// Texture plus planted objects at the given centers, then the regime's
/// color transform.
pub fn render_scene(
    width: usize,
    height: usize,
    mitoses: &[Point],
    rings: &[Point],
    style: &ObjectStyle,
    regime: &StainRegime,
    rng: &mut impl Rng,
) -> (Raster, Vec<SynthObject>) {
    let mut img = render_texture(width, height, rng);
    let mut objects = Vec::with_capacity(mitoses.len() + rings.len());
    for &c in mitoses {
        let rx = rng.random_range(style.mitosis_radius.0..=style.mitosis_radius.1);
        let ry = rng.random_range(style.mitosis_radius.0..=style.mitosis_radius.1);
        objects.push(plant_mitosis(&mut img, c, rx, ry));
    }
    for &c in rings {
        let outer = rng.random_range(style.ring_radius.0..=style.ring_radius.1);
        objects.push(plant_ring(&mut img, c, outer, style.ring_thickness));
    }
    (regime.apply_raster(&img), objects)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Annotated slides, assigned round-robin to the three annotated scanners.
    pub slides: usize,
    /// Extra unannotated slides from the reference scanner.
    pub reference_slides: usize,
    pub mitoses_per_slide: usize,
    pub hard_negatives_per_slide: usize,
    pub width: usize,
    pub height: usize,
    pub style: ObjectStyle,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            slides: 4,
            reference_slides: 0,
            mitoses_per_slide: 5,
            hard_negatives_per_slide: 5,
            width: 256,
            height: 256,
            style: ObjectStyle::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSlide {
    pub slide_id: String,
    pub scanner: ScannerId,
    pub image: Raster,
    pub objects: Vec<SynthObject>,
}

impl SynthSlide {
    pub fn mitosis_centers(&self) -> Vec<Point> {
        self.objects.iter().filter(|o| o.label == Label::Mitosis).map(|o| o.center).collect()
    }
}

pub fn synth_slides(spec: &SynthSpec, seed: u64) -> Result<Vec<SynthSlide>> {
    if spec.width == 0 || spec.height == 0 || spec.slides + spec.reference_slides == 0 {
        return Err(Error::config("synthetic spec needs a positive extent and slide count"));
    }
    let mut out = Vec::with_capacity(spec.slides + spec.reference_slides);
    for i in 0..spec.slides + spec.reference_slides {
        let mut rng = rng::stream(seed, 1000 + i as u64);
        let (scanner, slide_id) = if i < spec.slides {
            let s = ScannerId::ANNOTATED[i % 3];
            (s, format!("{}-{:03}", s.name(), i))
        } else {
            (ScannerId::Gt450, format!("GT450-{:03}", i))
        };
        let mitoses = scatter_points(spec.width, spec.height, spec.mitoses_per_slide, &spec.style, &[], &mut rng);
        let rings = scatter_points(
            spec.width,
            spec.height,
            spec.hard_negatives_per_slide,
            &spec.style,
            &mitoses,
            &mut rng,
        );
        if mitoses.len() < spec.mitoses_per_slide || rings.len() < spec.hard_negatives_per_slide {
            return Err(Error::config(format!(
                "cannot place {} objects on a {}x{} slide with spacing {}",
                spec.mitoses_per_slide + spec.hard_negatives_per_slide,
                spec.width,
                spec.height,
                spec.style.min_spacing
            )));
        }
        let regime = StainRegime::for_scanner(scanner);
        let (image, objects) = render_scene(spec.width, spec.height, &mitoses, &rings, &spec.style, &regime, &mut rng);
        out.push(SynthSlide {
            slide_id,
            scanner,
            image,
            objects,
        });
    }
    Ok(out)
}

/// Manifest for generated slides; images are expected at `<slide_id>.png`.
/// Reference-scanner slides are listed without annotations.
pub fn synth_manifest(slides: &[SynthSlide]) -> DatasetManifest {
    let mut m = DatasetManifest::default();
    for s in slides {
        m.slides.push(SlideEntry {
            slide_id: s.slide_id.clone(),
            scanner: s.scanner,
            image: format!("{}.png", s.slide_id),
            width: s.image.width(),
            height: s.image.height(),
        });
        if s.scanner.is_reference() {
            continue;
        }
        for o in &s.objects {
            m.annotations.push(Annotation {
                slide_id: s.slide_id.clone(),
                bbox: o.bbox,
                label: o.label,
            });
        }
    }
    m
}

/// Same textures rendered in two color regimes: domain A (an annotated
/// scanner) and domain B (the reference scanner). Patch contents of the two
/// domains are independent draws, i.e. unpaired.
pub fn two_domain_patches(n: usize, size: usize, seed: u64) -> (Vec<Raster>, Vec<Raster>) {
    let style = ObjectStyle::default();
    let make = |regime: StainRegime, stream: u64| -> Vec<Raster> {
        let mut rng = rng::stream(seed, stream);
        (0..n)
            .map(|_| {
                let k = rng.random_range(0..3usize);
                let pts = scatter_points(size, size, k, &style, &[], &mut rng);
                render_scene(size, size, &pts, &[], &style, &regime, &mut rng).0
            })
            .collect()
    };
    let a = make(StainRegime::for_scanner(ScannerId::Xr), 11);
    let b = make(StainRegime::for_scanner(ScannerId::Gt450), 12);
    (a, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTile {
    pub image: Raster,
    pub objects: Vec<SynthObject>,
}

impl SynthTile {
    pub fn boxes(&self) -> Vec<BoundingBox> {
        self.objects.iter().map(|o| o.bbox).collect()
    }
}

/// Detector fixture: tiles in the reference regime with up to
/// `max_objects` planted objects of either label (a quarter of the tiles
/// are pure background).
pub fn detection_tiles(n: usize, size: usize, max_objects: usize, seed: u64) -> Vec<SynthTile> {
    let style = ObjectStyle {
        min_spacing: 18.0,
        ..ObjectStyle::default()
    };
    let mut rng = rng::stream(seed, 21);
    (0..n)
        .map(|i| {
            let k = if i % 4 == 3 { 0 } else { rng.random_range(1..=max_objects.max(1)) };
            let pts = scatter_points(size, size, k, &style, &[], &mut rng);
            let split = rng.random_range(0..=pts.len());
            let (m, h) = pts.split_at(split);
            let (image, objects) = render_scene(size, size, m, h, &style, &StainRegime::IDENTITY, &mut rng);
            SynthTile { image, objects }
        })
        .collect()
}
