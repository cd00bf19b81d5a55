//! Distance-matched precision, recall and F1 for point detections.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

pub const DEFAULT_RADIUS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub match_radius: f64,
    pub per_slide: bool,
    pub aggregate: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_radius: DEFAULT_RADIUS,
            per_slide: true,
            aggregate: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_radius > 0.0 && self.match_radius.is_finite()) {
            return Err(Error::config("match radius must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl Counts {
    pub fn add(&mut self, other: &Counts) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub counts: Counts,
    /// `(detection index, truth index, distance)`.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Greedy matching: detections in descending score order (ties by input
/// order) each claim the nearest unmatched truth within `radius`,
/// ties going to the lower truth index.
pub fn match_points(dets: &[(Point, f64)], truths: &[Point], radius: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1).then(a.cmp(&b)));
    let mut taken = alloc::vec![false; truths.len()];
    let mut pairs = Vec::new();
    for d in order {
        let p = dets[d].0;
        let mut best: Option<(usize, f64)> = None;
        for (t, q) in truths.iter().enumerate() {
            if taken[t] {
                continue;
            }
            let dist = p.distance(q);
            if dist <= radius && best.is_none_or(|(_, b)| dist < b) {
                best = Some((t, dist));
            }
        }
        if let Some((t, dist)) = best {
            taken[t] = true;
            pairs.push((d, t, dist));
        }
    }
    let tp = pairs.len();
    MatchResult {
        counts: Counts {
            true_positives: tp,
            false_positives: dets.len() - tp,
            false_negatives: truths.len() - tp,
        },
        pairs,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

pub fn prf(c: &Counts) -> Prf {
    let tp = c.true_positives as f64;
    let precision = ratio(tp, tp + c.false_positives as f64);
    let recall = ratio(tp, tp + c.false_negatives as f64);
    Prf {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub slide_id: String,
    pub counts: Counts,
    pub prf: Prf,
}

impl ScoreRow {
    fn new(slide_id: String, counts: Counts) -> Self {
        Self {
            slide_id,
            prf: prf(&counts),
            counts,
        }
    }
}

pub const AGGREGATE_ID: &str = "ALL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub radius: f64,
    pub per_slide: Vec<ScoreRow>,
    /// Pooled counts over all slides.
    pub aggregate: ScoreRow,
}

/// Scores every slide that has truths or detections. Slides with truths
/// but no detections count as all misses; detections on a slide without a
/// truth entry are rejected.
pub fn evaluate_dataset(
    detections: &BTreeMap<String, Vec<(Point, f64)>>,
    truths: &BTreeMap<String, Vec<Point>>,
    cfg: &EvalConfig,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    if let Some(id) = detections.keys().find(|id| !truths.contains_key(*id)) {
        return Err(Error::UnknownSlide(id.clone()));
    }
    let mut per_slide = Vec::with_capacity(truths.len());
    let mut total = Counts::default();
    for (id, t) in truths {
        let d = detections.get(id).map(Vec::as_slice).unwrap_or(&[]);
        let m = match_points(d, t, cfg.match_radius);
        total.add(&m.counts);
        per_slide.push(ScoreRow::new(id.clone(), m.counts));
    }
    Ok(EvaluationReport {
        radius: cfg.match_radius,
        per_slide,
        aggregate: ScoreRow::new(AGGREGATE_ID.into(), total),
    })
}
