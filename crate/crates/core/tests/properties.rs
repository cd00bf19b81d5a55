use mitosis_core::classification::{augment_offline, augment_online, classify, classify_batch, ClassifierConfig, ClassifierModel, CropLabel, LabeledCrop, OnlineAugment};
use mitosis_core::checkpoint::{Checkpoint, NamedTensor, Stage};
use mitosis_core::detection::{decode_box, detect, encode_box, DetectorConfig, DetectorModel};
use mitosis_core::evaluation::{f1_score, match_points, prf, Counts};
use mitosis_core::geometry::{iou, nms, BoundingBox, Detection, FrameTransform, Point};
use mitosis_core::raster::Raster;
use mitosis_core::tiling::build_grid;
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (0.0..200.0f64, 0.0..200.0f64, 1.0..60.0f64, 1.0..60.0f64).prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
}

fn dets(max: usize) -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec((bbox(), 0.0..1.0f64), 0..max).prop_map(|v| v.into_iter().map(|(b, s)| Detection::new(b, s, 0)).collect())
}

fn point() -> impl Strategy<Value = Point> {
    (0.0..100.0f64, 0.0..100.0f64).prop_map(|(x, y)| Point::new(x, y))
}

fn raster(w: usize, h: usize) -> impl Strategy<Value = Raster> {
    prop::collection::vec(0.0..1.0f32, w * h * 3).prop_map(move |d| Raster::from_vec(w, h, d).unwrap())
}

/// Maximum bipartite matching between detections and truths within radius.
fn optimal_tp(d: &[Point], t: &[Point], radius: f64) -> usize {
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                if owner[j].is_none() || augment(owner[j].unwrap(), adj, seen, owner) {
                    owner[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    let adj: Vec<Vec<usize>> = d.iter().map(|p| (0..t.len()).filter(|&j| p.distance(&t[j]) <= radius).collect()).collect();
    let mut owner = vec![None; t.len()];
    (0..d.len()).filter(|&i| augment(i, &adj, &mut vec![false; t.len()], &mut owner)).count()
}

proptest! {
    #[test]
    fn nms_subset_sorted_and_idempotent(d in dets(40), thr in 0.0..1.0f64) {
        let kept = nms(&d, thr);
        for k in &kept {
            prop_assert!(d.contains(k));
        }
        for w in kept.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(iou(&a.bbox, &b.bbox) <= thr);
            }
        }
        prop_assert_eq!(nms(&kept, thr), kept.clone());
        prop_assert_eq!(nms(&d, 1.0).len(), d.len());
    }

    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (x, y) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn frame_round_trip_and_composition(p in point(), o1 in point(), o2 in point(), o3 in point(), s1 in 0.25..4.0f64, s2 in 0.25..4.0f64, s3 in 0.25..4.0f64) {
        let a = FrameTransform::new(o1, s1).unwrap();
        let b = FrameTransform::new(o2, s2).unwrap();
        let c = FrameTransform::new(o3, s3).unwrap();
        let back = a.to_patch(a.to_slide(p));
        prop_assert!((back.x - p.x).abs() < 1e-9 && (back.y - p.y).abs() < 1e-9);
        let left = a.compose(&b).compose(&c).to_slide(p);
        let right = a.compose(&b.compose(&c)).to_slide(p);
        prop_assert!((left.x - right.x).abs() < 1e-9 && (left.y - right.y).abs() < 1e-9);
        let nested = a.to_slide(b.to_slide(p));
        let composed = a.compose(&b).to_slide(p);
        prop_assert!((nested.x - composed.x).abs() < 1e-9 && (nested.y - composed.y).abs() < 1e-9);
    }

    #[test]
    fn grid_covers_every_pixel(w in 1usize..700, h in 1usize..700, tile in 16usize..256, frac in 0.3..1.0f64) {
        let stride = ((tile as f64 * frac) as usize).max(1);
        let g = build_grid(w, h, tile, stride).unwrap();
        let mut covered = vec![false; w * h];
        for t in &g.tiles {
            for y in t.y.max(0)..(t.y + tile as i64).min(h as i64) {
                for x in t.x.max(0)..(t.x + tile as i64).min(w as i64) {
                    covered[y as usize * w + x as usize] = true;
                }
            }
        }
        prop_assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn encode_decode_round_trip(a in bbox(), t in bbox()) {
        let back = decode_box(&a, encode_box(&a, &t)).unwrap();
        for (u, v) in back.to_array().iter().zip(t.to_array()) {
            prop_assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn matching_invariants(
        d in prop::collection::vec((point(), 0.0..1.0f64), 0..12),
        t in prop::collection::vec(point(), 0..12),
        radius in 1.0..40.0f64,
        shrink in 0.1..1.0f64,
        rot in 0usize..12,
    ) {
        let m = match_points(&d, &t, radius);
        let c = m.counts;
        prop_assert_eq!(c.true_positives, m.pairs.len());
        prop_assert_eq!(c.false_positives + c.true_positives, d.len());
        prop_assert_eq!(c.false_negatives + c.true_positives, t.len());
        for &(i, j, dist) in &m.pairs {
            prop_assert!(dist <= radius);
            prop_assert!((d[i].0.distance(&t[j]) - dist).abs() < 1e-12);
        }
        let mut di: Vec<usize> = m.pairs.iter().map(|p| p.0).collect();
        let mut ti: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
        di.sort();
        di.dedup();
        ti.sort();
        ti.dedup();
        prop_assert_eq!(di.len(), m.pairs.len());
        prop_assert_eq!(ti.len(), m.pairs.len());

        let pts: Vec<Point> = d.iter().map(|x| x.0).collect();
        prop_assert!(c.true_positives <= optimal_tp(&pts, &t, radius));
        prop_assert!(match_points(&d, &t, radius * shrink).counts.true_positives <= c.true_positives);

        let mut rotated = t.clone();
        if !rotated.is_empty() {
            let k = rot % rotated.len();
            rotated.rotate_left(k);
        }
        prop_assert_eq!(match_points(&d, &rotated, radius).counts, c);
    }

    #[test]
    fn f1_bounds(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
        let r = prf(&Counts { true_positives: tp, false_positives: fp, false_negatives: fn_ });
        let lo = r.precision.min(r.recall);
        prop_assert!(r.f1 <= 2.0 * lo / (1.0 + lo) + 1e-12);
        prop_assert!(r.f1 >= lo - 1e-12);
        prop_assert!((f1_score(r.recall, r.precision) - r.f1).abs() < 1e-12);
    }

    #[test]
    fn augmentations_preserve_label_and_shape(px in raster(12, 12), seed in any::<u64>(), k in 0usize..4, mitosis in any::<bool>()) {
        let label = if mitosis { CropLabel::Mitosis } else { CropLabel::NonMitosis };
        let crop = LabeledCrop { pixels: px.clone(), label, slide_id: "s".into(), center: Point::new(6.0, 6.0) };
        let out = augment_offline(&crop, k, seed);
        prop_assert_eq!(out.len(), 2 + k);
        for o in &out {
            prop_assert_eq!(o.label, label);
            prop_assert_eq!((o.pixels.width(), o.pixels.height()), (12, 12));
        }
        let batch = vec![px.clone(), px];
        for r in augment_online(&batch, &OnlineAugment::default(), seed) {
            prop_assert_eq!((r.width(), r.height()), (12, 12));
        }
    }

    #[test]
    fn checkpoint_round_trip(epoch in any::<u64>(), data in prop::collection::vec(any::<f64>(), 0..64), series in prop::collection::vec(-1e6..1e6f64, 0..16)) {
        let mut ck = Checkpoint::new(Stage::Detector, &DetectorConfig::default()).unwrap();
        ck.epoch = epoch;
        ck.tensors.push(NamedTensor::flat("w", data));
        ck.push_series("loss", series);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), ck.to_bytes());
    }
}

#[test]
fn detect_output_respects_gates() {
    let cfg = DetectorConfig {
        tile_size: 32,
        backbone_depth: 2,
        backbone_width: 4,
        anchor_sizes: vec![6.0, 10.0],
        anchor_ratios: vec![0.5, 1.0, 2.0],
        prior_probability: 0.5,
        score_threshold: 0.3,
        nms_iou: 0.2,
        ..DetectorConfig::default()
    };
    let model = DetectorModel::new(cfg.clone()).unwrap();
    let tile = Raster::from_fn(32, 32, |x, y| [((x * 5 + y * 3) % 7) as f32 / 7.0, 0.3, (y % 4) as f32 / 4.0]);
    let out = detect(&tile, &model, &cfg).unwrap();
    assert!(!out.is_empty());
    for (i, a) in out.iter().enumerate() {
        assert!(a.score >= cfg.score_threshold);
        assert!(a.bbox.x_min() >= 0.0 && a.bbox.y_min() >= 0.0 && a.bbox.x_max() <= 32.0 && a.bbox.y_max() <= 32.0);
        for b in &out[i + 1..] {
            assert!(iou(&a.bbox, &b.bbox) <= cfg.nms_iou);
            assert!(a.score >= b.score);
        }
    }
    assert_eq!(nms(&out, cfg.nms_iou), out);
}

#[test]
fn classification_is_batch_independent() {
    let model = ClassifierModel::new(ClassifierConfig {
        crop_size: 20,
        network_input: 16,
        depth: 2,
        width: 4,
        ..ClassifierConfig::default()
    })
    .unwrap();
    let crops: Vec<Raster> = (0..5)
        .map(|k| Raster::from_fn(20, 20, |x, y| [((x + k) % 5) as f32 / 5.0, (y % 3) as f32 / 3.0, 0.5]))
        .collect();
    let batch = classify_batch(&crops, &model).unwrap();
    for (c, (p, _)) in crops.iter().zip(&batch) {
        let (q, _) = classify(c, &model).unwrap();
        assert!((p - q).abs() < 1e-5);
    }
}
