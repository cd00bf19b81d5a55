//! Acceptance checks. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

use std::io::Write;
use std::time::{Duration, Instant};

use mitosis_core::classification::{
    augment_offline, classify, make_crop, train_classifier, ClassifierConfig, ClassifierModel, CropLabel, LabeledCrop,
};
use mitosis_core::data::{
    detection_tiles, render_scene, scatter_points, synth_slides, two_domain_patches, ObjectStyle, ScannerId, StainRegime, SynthSpec,
    SynthTile,
};
use mitosis_core::detection::{decode_box, detect, encode_box, encode_targets, train_detector, DetectorConfig, DetectorModel};
use mitosis_core::evaluation::{f1_score, match_points, prf, Counts};
use mitosis_core::geometry::{nms, BoundingBox, Detection, FrameTransform, Point};
use mitosis_core::nn::{gradient_check, Tensor};
use mitosis_core::pipeline::{run_slide, run_slide_cached, Models, NullClock, PipelineConfig, StageCache, TilingConfig};
use mitosis_core::raster::Raster;
use mitosis_core::rng::seeded;
use mitosis_core::split::{make_split, SplitConfig};
use mitosis_core::tiling::{build_grid, TileSpec};
use mitosis_core::translation::{
    cycle_loss_gradient, cycle_loss_with, train_translation, translate, GeneratorInit, TranslationConfig, TranslationModel,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant, outcome: Outcome) -> Outcome {
    let t = start.elapsed();
    match outcome {
        Ok(d) if t < limit => Ok(format!("{d} in {:.2}s", t.as_secs_f64())),
        Ok(d) => Err(format!("{d} but took {:.2}s (limit {}s)", t.as_secs_f64(), limit.as_secs())),
        Err(d) => Err(format!("{d} in {:.2}s", t.as_secs_f64())),
    }
}

fn translation_config() -> TranslationConfig {
    TranslationConfig {
        patch_size: 64,
        epochs: 30,
        learning_rate: 0.002,
        generator_depth: 2,
        generator_width: 8,
        residual_blocks: 2,
        discriminator_depth: 3,
        discriminator_width: 8,
        image_pool_size: 10,
        ..TranslationConfig::default()
    }
}

fn detector_config() -> DetectorConfig {
    DetectorConfig {
        tile_size: 64,
        backbone_depth: 2,
        backbone_width: 8,
        anchor_sizes: vec![12.0],
        anchor_ratios: vec![1.0],
        learning_rate: 2e-3,
        train_iterations: 300,
        batch_size: 4,
        ..DetectorConfig::default()
    }
}

fn classifier_config() -> ClassifierConfig {
    ClassifierConfig {
        crop_size: 24,
        network_input: 16,
        depth: 2,
        width: 8,
        epochs: 15,
        learning_rate: 0.005,
        offline_rotations: 1,
        ..ClassifierConfig::default()
    }
}

fn pipeline_config() -> PipelineConfig {
    PipelineConfig {
        translation: TranslationConfig {
            patch_size: 128,
            ..translation_config()
        },
        detector: detector_config(),
        classifier: classifier_config(),
        tiling: TilingConfig {
            translation_stride: 128,
            detection_stride: 48,
            ..TilingConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn boxed_tiles(tiles: &[SynthTile]) -> Vec<(Raster, Vec<BoundingBox>)> {
    tiles.iter().map(|t| (t.image.clone(), t.boxes())).collect()
}

fn classifier_crops(tiles: &[SynthTile], cfg: &ClassifierConfig) -> Vec<LabeledCrop> {
    let mut crops = Vec::new();
    for (i, t) in tiles.iter().enumerate() {
        for o in &t.objects {
            let c = LabeledCrop {
                pixels: make_crop(&t.image, o.center, cfg.crop_size).unwrap(),
                label: o.label.into(),
                slide_id: format!("tile-{i}"),
                center: o.center,
            };
            crops.extend(augment_offline(&c, cfg.offline_rotations, i as u64));
        }
    }
    crops
}

fn mean_channel_gap(x: &[Raster], y: &[Raster]) -> f64 {
    let means = |v: &[Raster]| {
        let mut s = [0.0; 3];
        for r in v {
            for (acc, c) in s.iter_mut().zip(r.channel_means()) {
                *acc += c / v.len() as f64;
            }
        }
        s
    };
    let (p, q) = (means(x), means(y));
    (0..3).map(|i| (p[i] - q[i]).abs()).sum::<f64>() / 3.0
}

fn xr_scene(mitoses: &[Point], rings: &[Point], seed: u64) -> Raster {
    let style = ObjectStyle::default();
    let mut rng = seeded(seed);
    render_scene(256, 256, mitoses, rings, &style, &StainRegime::for_scanner(ScannerId::Xr), &mut rng).0
}

fn fixture_slide(seed: u64) -> (Raster, Vec<Point>) {
    let style = ObjectStyle::default();
    let mut rng = seeded(seed);
    let m = scatter_points(256, 256, 5, &style, &[], &mut rng);
    let h = scatter_points(256, 256, 5, &style, &m, &mut rng);
    (xr_scene(&m, &h, seed + 1), m)
}

fn oracle_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x_max().min(b.x_max()) - a.x_min().max(b.x_min())).max(0.0);
    let h = (a.y_max().min(b.y_max()) - a.y_min().max(b.y_min())).max(0.0);
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}

/// Quadratic greedy NMS over a precomputed overlap matrix.
fn oracle_nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (&dets[i], &dets[j]);
        b.score
            .total_cmp(&a.score)
            .then(a.bbox.x_min().total_cmp(&b.bbox.x_min()))
            .then(a.bbox.y_min().total_cmp(&b.bbox.y_min()))
    });
    let n = idx.len();
    let overlap: Vec<Vec<f64>> = idx.iter().map(|&i| idx.iter().map(|&j| oracle_iou(&dets[i].bbox, &dets[j].bbox)).collect()).collect();
    let mut suppressed = vec![false; n];
    let mut out = Vec::new();
    for i in 0..n {
        if suppressed[i] {
            continue;
        }
        out.push(dets[idx[i]]);
        for j in i + 1..n {
            if overlap[i][j] > thr {
                suppressed[j] = true;
            }
        }
    }
    out
}

/// Maximum bipartite matching size between detections and truths within radius.
fn optimal_tp(d: &[Point], t: &[Point], radius: f64) -> usize {
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                if owner[j].is_none_or(|o| augment(o, adj, seen, owner)) {
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

fn well_separated(points: &[Point], radius: f64) -> bool {
    points.iter().enumerate().all(|(i, p)| {
        points[i + 1..].iter().all(|q| {
            let d = p.distance(q);
            d < radius / 2.0 || d > 2.0 * radius
        })
    })
}

fn random_points(rng: &mut impl Rng, n: usize, extent: f64) -> Vec<Point> {
    (0..n).map(|_| Point::new(rng.random_range(0.0..extent), rng.random_range(0.0..extent))).collect()
}

/// Points in tight clusters (diameter below radius/2) whose centers are more
/// than three radii apart.
fn clustered_instance<R: Rng>(rng: &mut R, radius: f64) -> (Vec<Point>, Vec<Point>) {
    let k = rng.random_range(1..=5);
    let mut centers: Vec<Point> = Vec::new();
    while centers.len() < k {
        let c = Point::new(rng.random_range(0.0..20.0 * radius), rng.random_range(0.0..20.0 * radius));
        if centers.iter().all(|o| o.distance(&c) > 3.0 * radius) {
            centers.push(c);
        }
    }
    let jitter = |rng: &mut R| {
        let c = centers[rng.random_range(0..k)];
        let r = rng.random_range(0.0..radius * 0.24);
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        Point::new(c.x + r * a.cos(), c.y + r * a.sin())
    };
    let nd = rng.random_range(0..=12);
    let nt = rng.random_range(0..=12);
    let d = (0..nd).map(|_| jitter(rng)).collect();
    let t = (0..nt).map(|_| jitter(rng)).collect();
    (d, t)
}

fn c2_metric() -> Outcome {
    let f1 = f1_score(0.71, 0.41);
    let r = prf(&Counts {
        true_positives: 2911,
        false_positives: 1189,
        false_negatives: 4189,
    });
    check(
        (f1 - 0.52).abs() <= 0.005 && (r.f1 - 0.52).abs() <= 0.005 && (r.precision - 0.71).abs() < 1e-12 && (r.recall - 0.41).abs() < 1e-12,
        format!("F1(P=0.71, R=0.41) = {f1:.4}; from counts {:.4}", r.f1),
    )
}

fn c3_nms() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(3);
    let mut boxes_total = 0;
    for case in 0..1000 {
        let n = rng.random_range(0..=200);
        boxes_total += n;
        let extent = rng.random_range(50.0..600.0);
        let dets: Vec<Detection> = (0..n)
            .map(|_| {
                let (x, y) = (rng.random_range(0.0..extent), rng.random_range(0.0..extent));
                let (w, h) = (rng.random_range(1.0..80.0), rng.random_range(1.0..80.0));
                // coarse scores so ties occur
                let s = if case % 2 == 0 { rng.random_range(0..20) as f64 / 20.0 } else { rng.random_range(0.0..1.0) };
                Detection::new(BoundingBox::new(x, y, x + w, y + h).unwrap(), s, 0)
            })
            .collect();
        let (got, want) = (nms(&dets, 0.1), oracle_nms(&dets, 0.1));
        if got != want {
            return within(Duration::from_secs(10), start, Err(format!("instance {case}: {} kept vs oracle {}", got.len(), want.len())));
        }
    }
    within(Duration::from_secs(10), start, Ok(format!("1000 instances ({boxes_total} boxes) identical to oracle")))
}

fn c4_matching() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(4);
    let (mut separated, mut strict) = (0, 0);
    let mut test = |d: Vec<Point>, t: Vec<Point>, radius: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Result<(), String> {
        let scored: Vec<(Point, f64)> = d.iter().map(|p| (*p, rng.random_range(0.0..1.0))).collect();
        let greedy = match_points(&scored, &t, radius).counts.true_positives;
        let best = optimal_tp(&d, &t, radius);
        let all: Vec<Point> = d.iter().chain(&t).copied().collect();
        if greedy > best {
            return Err(format!("greedy {greedy} > optimal {best}"));
        }
        if well_separated(&all, radius) {
            separated += 1;
            if greedy != best {
                return Err(format!("well-separated instance: greedy {greedy} != optimal {best}"));
            }
        } else if greedy < best {
            strict += 1;
        }
        Ok(())
    };
    for _ in 0..500 {
        let radius = rng.random_range(2.0..30.0);
        let (nd, nt) = (rng.random_range(0..=12), rng.random_range(0..=12));
        let d = random_points(&mut rng, nd, 100.0);
        let t = random_points(&mut rng, nt, 100.0);
        if let Err(e) = test(d, t, radius, &mut rng) {
            return within(Duration::from_secs(30), start, Err(e));
        }
    }
    for _ in 0..500 {
        let radius = rng.random_range(2.0..30.0);
        let (d, t) = clustered_instance(&mut rng, radius);
        if let Err(e) = test(d, t, radius, &mut rng) {
            return within(Duration::from_secs(30), start, Err(e));
        }
    }
    within(
        Duration::from_secs(30),
        start,
        check(
            separated >= 500,
            format!("1000 instances, greedy <= optimal everywhere, equal on {separated} well-separated ({strict} strictly below elsewhere)"),
        ),
    )
}

fn c5_tiling() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(5);
    for case in 0..50 {
        let (w, h) = (rng.random_range(1..1500), rng.random_range(1..1500));
        let tile = rng.random_range(8..600);
        let stride = rng.random_range((tile / 3).max(1)..=tile);
        let g = build_grid(w, h, tile, stride).map_err(|e| e.to_string())?;
        let mut covered = vec![false; w * h];
        for t in &g.tiles {
            for y in t.y.max(0)..(t.y + tile as i64).min(h as i64) {
                for x in t.x.max(0)..(t.x + tile as i64).min(w as i64) {
                    covered[y as usize * w + x as usize] = true;
                }
            }
        }
        if let Some(i) = covered.iter().position(|c| !c) {
            return within(
                Duration::from_secs(10),
                start,
                Err(format!("case {case} ({w}x{h}, tile {tile}, stride {stride}): pixel ({}, {}) uncovered", i % w, i / w)),
            );
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let spec = TileSpec {
            x: rng.random_range(-512..100_000),
            y: rng.random_range(-512..100_000),
            size: 512,
            level: 0,
        };
        let scaled = FrameTransform::new(Point::new(rng.random_range(0.0..1e5), rng.random_range(0.0..1e5)), rng.random_range(0.25..4.0)).unwrap();
        let p = Point::new(rng.random_range(-10.0..600.0), rng.random_range(-10.0..600.0));
        for t in [spec.transform(), scaled] {
            let back = t.to_patch(t.to_slide(p));
            worst = worst.max((back.x - p.x).abs()).max((back.y - p.y).abs());
        }
    }
    within(
        Duration::from_secs(10),
        start,
        check(worst < 1e-9, format!("50 grids fully covered; 10000 patch-slide round trips, max error {worst:.1e}")),
    )
}

fn random_tensor(rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(3, 8, 8, (0..192).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn c6_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(6);

    let gen = TranslationModel::new(TranslationConfig {
        patch_size: 8,
        generator_depth: 1,
        generator_width: 4,
        residual_blocks: 1,
        discriminator_depth: 1,
        discriminator_width: 4,
        init: GeneratorInit::Random,
        ..TranslationConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let (a, b) = ([random_tensor(&mut rng)], [random_tensor(&mut rng)]);
    let (_, g_ab, g_ba) = cycle_loss_gradient(&a, &b, &gen);
    let idx: Vec<usize> = (0..g_ab.len()).collect();
    let e_ab = gradient_check(&gen.g_ab.params, &g_ab, &idx, 1e-6, |p| cycle_loss_with(&a, &b, &gen.g_ab, p, &gen.g_ba, &gen.g_ba.params));
    let e_ba = gradient_check(&gen.g_ba.params, &g_ba, &idx, 1e-6, |p| cycle_loss_with(&a, &b, &gen.g_ab, &gen.g_ab.params, &gen.g_ba, p));

    let dcfg = DetectorConfig {
        tile_size: 8,
        backbone_depth: 1,
        backbone_width: 3,
        anchor_sizes: vec![4.0],
        anchor_ratios: vec![1.0, 2.0],
        prior_probability: 0.3,
        ..DetectorConfig::default()
    };
    let mut det = DetectorModel::new(dcfg.clone()).map_err(|e| e.to_string())?;
    for v in &mut det.params {
        *v += rng.random_range(-0.3..0.3);
    }
    let x = random_tensor(&mut rng);
    let truth = [BoundingBox::new(1.0, 1.5, 5.0, 5.5).unwrap(), BoundingBox::new(4.0, 3.0, 7.5, 7.0).unwrap()];
    let targets = encode_targets(det.anchors(), &truth, &dcfg);
    let batch = [(&x, &targets)];
    let mut g = vec![0.0; det.params.len()];
    det.loss(&det.params, &batch, Some(&mut g));
    let idx: Vec<usize> = (0..g.len()).collect();
    let e_det = gradient_check(&det.params, &g, &idx, 1e-6, |p| det.loss(p, &batch, None).total);

    let cls = ClassifierModel::new(ClassifierConfig {
        crop_size: 8,
        network_input: 8,
        depth: 1,
        width: 3,
        ..ClassifierConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let xs: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut rng)).collect();
    let batch: Vec<(&Tensor, CropLabel)> = xs.iter().zip([CropLabel::Mitosis, CropLabel::NonMitosis, CropLabel::Mitosis]).collect();
    let mut g = vec![0.0; cls.params.len()];
    cls.loss(&cls.params, &batch, 1.0 / 3.0, Some(&mut g));
    let idx: Vec<usize> = (0..g.len()).collect();
    let e_cls = gradient_check(&cls.params, &g, &idx, 1e-6, |p| cls.loss(p, &batch, 1.0 / 3.0, None));

    let worst = e_ab.max(e_ba).max(e_det).max(e_cls);
    within(
        Duration::from_secs(60),
        start,
        check(
            worst < 1e-3,
            format!("max relative error: generator {:.1e}, detector {e_det:.1e}, classifier {e_cls:.1e}", e_ab.max(e_ba)),
        ),
    )
}

fn c7_encode_decode() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(7);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let mut bx = |lo: f64, hi: f64| {
            let (x, y) = (rng.random_range(-50.0..600.0), rng.random_range(-50.0..600.0));
            BoundingBox::new(x, y, x + rng.random_range(lo..hi), y + rng.random_range(lo..hi)).unwrap()
        };
        let anchor = bx(8.0, 128.0);
        let truth = bx(0.5, 200.0);
        let back = decode_box(&anchor, encode_box(&anchor, &truth)).map_err(|e| e.to_string())?;
        for (u, v) in back.to_array().iter().zip(truth.to_array()) {
            worst = worst.max((u - v).abs());
        }
    }
    within(Duration::from_secs(5), start, check(worst <= 1e-6, format!("10000 round trips, max error {worst:.1e}")))
}

fn c8_translation(model: &TranslationModel, initial: f64, last: f64, a: &[Raster], b: &[Raster]) -> Outcome {
    let translated: Vec<Raster> = a.iter().map(|r| translate(r, model)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let (before, after) = (mean_channel_gap(a, b), mean_channel_gap(&translated, b));
    let shrink = 1.0 - after / before;
    check(
        last < 0.5 * initial && shrink >= 0.3,
        format!(
            "cycle loss {initial:.4} -> {last:.4} ({:.1}%), channel-mean gap {before:.4} -> {after:.4} (shrink {:.1}%)",
            100.0 * last / initial,
            100.0 * shrink
        ),
    )
}

fn c9_detector(model: &DetectorModel, cfg: &DetectorConfig) -> Outcome {
    let held_out = detection_tiles(40, cfg.tile_size, 3, 2);
    let mut total = Counts::default();
    for t in &held_out {
        let dets = detect(&t.image, model, cfg).map_err(|e| e.to_string())?;
        let points: Vec<(Point, f64)> = dets.iter().map(|d| (d.bbox.center(), d.score)).collect();
        let truths: Vec<Point> = t.objects.iter().map(|o| o.center).collect();
        total.add(&match_points(&points, &truths, 8.0).counts);
    }
    let r = prf(&total);
    check(
        r.f1 >= 0.9,
        format!(
            "held-out F1 {:.3} (P {:.3}, R {:.3}; TP {} FP {} FN {}) at radius 8",
            r.f1, r.precision, r.recall, total.true_positives, total.false_positives, total.false_negatives
        ),
    )
}

fn c10_end_to_end(models: &Models, cfg: &PipelineConfig) -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    for seed in [100, 200, 300] {
        let (img, truths) = fixture_slide(seed);
        let res = run_slide("fixture", &img, models, cfg, &NullClock).map_err(|e| e.to_string())?;
        let m = match_points(&res.mitoses, &truths, 8.0).counts;
        if res.mitoses.len() != 5 || m.true_positives != 5 {
            return within(
                Duration::from_secs(300),
                start,
                Err(format!("slide {seed}: {} points, {} within 8 px of the 5 mitoses", res.mitoses.len(), m.true_positives)),
            );
        }
        notes.push(format!("{}->{}", res.candidates_total, res.mitoses.len()));
    }
    // translation patch seam at 128, detection tile edges at 64 and 112
    let seams = [Point::new(128.0, 128.0), Point::new(128.0, 70.0), Point::new(112.0, 100.0), Point::new(64.0, 160.0)];
    for (k, p) in seams.iter().enumerate() {
        let img = xr_scene(&[*p], &[], 400 + k as u64);
        let res = run_slide("seam", &img, models, cfg, &NullClock).map_err(|e| e.to_string())?;
        let near = res.mitoses.iter().filter(|(q, _)| q.distance(p) <= 8.0).count();
        if res.mitoses.len() != 1 || near != 1 {
            return within(
                Duration::from_secs(300),
                start,
                Err(format!("seam blob at ({}, {}): {} points", p.x, p.y, res.mitoses.len())),
            );
        }
    }
    within(
        Duration::from_secs(300),
        start,
        Ok(format!(
            "3 slides with 5 mitoses + 5 rings -> exactly 5 matched points (candidates->kept {}); 4 seam blobs -> 1 point each",
            notes.join(", ")
        )),
    )
}

fn c11_determinism(models: &Models, cfg: &PipelineConfig) -> Outcome {
    let (a, b) = two_domain_patches(3, 32, 11);
    let tcfg = TranslationConfig {
        patch_size: 32,
        epochs: 3,
        image_pool_size: 2,
        ..translation_config()
    };
    let t1 = train_translation(&a, &b, &tcfg).map_err(|e| e.to_string())?;
    let t2 = train_translation(&a, &b, &tcfg).map_err(|e| e.to_string())?;
    let translation_same = t1.1 == t2.1 && t1.0.g_ab.params == t2.0.g_ab.params && t1.0.g_ba.params == t2.0.g_ba.params;

    let tiles = boxed_tiles(&detection_tiles(12, 64, 3, 11));
    let dcfg = DetectorConfig {
        train_iterations: 30,
        ..detector_config()
    };
    let d1 = train_detector(&tiles, &dcfg).map_err(|e| e.to_string())?;
    let d2 = train_detector(&tiles, &dcfg).map_err(|e| e.to_string())?;
    let detector_same = d1.1 == d2.1 && d1.0.params == d2.0.params;

    let crops = classifier_crops(&detection_tiles(16, 64, 3, 12), &classifier_config());
    let (tr, va) = crops.split_at(crops.len() * 3 / 4);
    let ccfg = ClassifierConfig {
        epochs: 3,
        ..classifier_config()
    };
    let c1 = train_classifier(tr, va, &ccfg).map_err(|e| e.to_string())?;
    let c2 = train_classifier(tr, va, &ccfg).map_err(|e| e.to_string())?;
    let classifier_same = c1.1 == c2.1 && c1.0.params == c2.0.params;

    let (img, _) = fixture_slide(100);
    let r1 = run_slide("d", &img, models, cfg, &NullClock).map_err(|e| e.to_string())?;
    let r2 = run_slide("d", &img, models, cfg, &NullClock).map_err(|e| e.to_string())?;
    let mut cache = StageCache::new();
    let r3 = run_slide_cached("d", &img, models, cfg, &NullClock, &mut cache).map_err(|e| e.to_string())?;
    let r4 = run_slide_cached("d", &img, models, cfg, &NullClock, &mut cache).map_err(|e| e.to_string())?;
    let bits = |r: &mitosis_core::pipeline::SlideResult| -> Vec<[u64; 3]> {
        r.mitoses.iter().map(|(p, s)| [p.x.to_bits(), p.y.to_bits(), s.to_bits()]).collect()
    };
    let tile = &tiles[0].0;
    let crop = make_crop(&img, Point::new(100.0, 100.0), 24).map_err(|e| e.to_string())?;
    let inference_same = bits(&r1) == bits(&r2)
        && bits(&r1) == bits(&r3)
        && bits(&r3) == bits(&r4)
        && r1 == r2
        && detect(tile, &models.detector, &cfg.detector).ok() == detect(tile, &models.detector, &cfg.detector).ok()
        && classify(&crop, &models.classifier).map(|x| x.0.to_bits()).ok() == classify(&crop, &models.classifier).map(|x| x.0.to_bits()).ok()
        && translate(&a[0], &t1.0).ok() == translate(&a[0], &t1.0).ok();

    let synth_same = synth_slides(&SynthSpec::default(), 5).ok() == synth_slides(&SynthSpec::default(), 5).ok();
    let flags = [
        ("translation training", translation_same),
        ("detector training", detector_same),
        ("classifier training", classifier_same),
        ("inference", inference_same),
        ("fixtures", synth_same),
    ];
    let failed: Vec<&str> = flags.iter().filter(|f| !f.1).map(|f| f.0).collect();
    check(
        failed.is_empty(),
        if failed.is_empty() {
            "training histories and weights bit-identical across reruns; run_slide, detect, classify, translate bit-identical".into()
        } else {
            format!("nondeterministic: {}", failed.join(", "))
        },
    )
}

fn c12_split() -> Outcome {
    let ids: Vec<(String, Option<ScannerId>)> = (0..150).map(|i| (format!("slide-{i:03}"), Some(ScannerId::ANNOTATED[i % 3]))).collect();
    let cfg = SplitConfig::default();
    let s = make_split(&ids, &cfg).map_err(|e| e.to_string())?;
    let again = make_split(&ids, &cfg).map_err(|e| e.to_string())?;
    let mut all: Vec<&String> = s.train_ids.iter().chain(&s.val_ids).chain(&s.test_ids).collect();
    all.sort();
    all.dedup();
    let sizes = (s.test_ids.len(), s.train_ids.len(), s.val_ids.len());
    check(
        sizes == (45, 84, 21) && all.len() == 150 && s == again,
        format!("test/train/val = {}/{}/{}, {} distinct ids, stable under seed {}", sizes.0, sizes.1, sizes.2, all.len(), cfg.seed),
    )
}

#[test]
fn acceptance() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((2, "metric arithmetic", c2_metric()));
    results.push((3, "NMS equals brute-force oracle", c3_nms()));
    results.push((4, "greedy matching vs optimal assignment", c4_matching()));
    results.push((5, "tiling coverage and frame round trips", c5_tiling()));
    results.push((6, "analytic vs finite-difference gradients", c6_gradients()));
    results.push((7, "box encode/decode round trip", c7_encode_decode()));

    let start = Instant::now();
    let (a, b) = two_domain_patches(8, 64, 5);
    let trained = train_translation(&a, &b, &translation_config());
    let c8 = match &trained {
        Ok((m, h)) => {
            let last = h.epochs.last().map_or(h.initial_cycle, |e| e.cycle);
            c8_translation(m, h.initial_cycle, last, &a, &b)
        }
        Err(e) => Err(e.to_string()),
    };
    results.push((8, "desk-scale translation", within(Duration::from_secs(600), start, c8)));

    let start = Instant::now();
    let dcfg = detector_config();
    let train_tiles = detection_tiles(200, dcfg.tile_size, 3, 1);
    let detector = train_detector(&boxed_tiles(&train_tiles), &dcfg);
    let c9 = match &detector {
        Ok((m, _)) => c9_detector(m, &dcfg),
        Err(e) => Err(e.to_string()),
    };
    results.push((9, "desk-scale detection", within(Duration::from_secs(600), start, c9)));

    let ccfg = classifier_config();
    let crops = classifier_crops(&train_tiles, &ccfg);
    let (tr, va) = crops.split_at(crops.len() * 4 / 5);
    let classifier = train_classifier(tr, va, &ccfg);
    let pipeline = pipeline_config();
    let models = match (trained, detector, classifier) {
        (Ok(t), Ok(d), Ok(c)) => Ok(Models {
            translation: Some(t.0),
            detector: d.0,
            classifier: c.0,
        }),
        (t, d, c) => Err(format!(
            "training failed: {:?} {:?} {:?}",
            t.err().map(|e| e.to_string()),
            d.err().map(|e| e.to_string()),
            c.err().map(|e| e.to_string())
        )),
    };
    match &models {
        Ok(m) => {
            results.push((10, "end-to-end pipeline", c10_end_to_end(m, &pipeline)));
            results.push((11, "determinism", c11_determinism(m, &pipeline)));
        }
        Err(e) => {
            results.push((10, "end-to-end pipeline", Err(e.clone())));
            results.push((11, "determinism", Err(e.clone())));
        }
    }
    results.push((12, "split contract", c12_split()));

    let failing: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    let c1 = check(
        failing.is_empty(),
        if failing.is_empty() {
            "dataset-scale F1 not reproducible on a desk; all substitute checks 2-12 pass".into()
        } else {
            format!("substitute checks failing: {failing:?}")
        },
    );
    results.insert(0, (1, "published-score reproduction via substitute checks", c1));

    // written to the process stdout directly so the lines survive test output capture
    let mut out = std::io::stdout().lock();
    for (n, name, r) in &results {
        let line = match r {
            Ok(d) => format!("criterion {n:>2} PASS  {name}: {d}\n"),
            Err(d) => format!("criterion {n:>2} FAIL  {name}: {d}\n"),
        };
        out.write_all(line.as_bytes()).unwrap();
    }
    out.flush().unwrap();
    assert!(results.iter().all(|r| r.2.is_ok()), "acceptance criteria failed");
}
