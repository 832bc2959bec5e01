//! Acceptance gate: every release-blocking criterion as one test printing a
//! PASS/FAIL line with the measured values.

mod common;

use std::time::Instant;

use common::{
    conv2d_oracle, max_rel_diff, maxpool_oracle, rand_tensor, seeded, write_manifest,
    write_synthetic_sample,
};
use lf_yolo_core::analyzer::{analyze_block, analyze_model};
use lf_yolo_core::blocks::{Efe, EfeSpec, GhostConv, GhostSpec, ResidualRef};
use lf_yolo_core::eval::{ap50, map50, EvalRecord};
use lf_yolo_core::exec::{Executor, InferExec};
use lf_yolo_core::gradcheck::run_suite;
use lf_yolo_core::io::annot::load_manifest;
use lf_yolo_core::io::image::load_image;
use lf_yolo_core::io::weights::{decode_weights, encode_weights};
use lf_yolo_core::model::{
    default_anchors, detect, Detection, Model, ModelConfig, PixelBox,
};
use lf_yolo_core::ops::{conv2d, maxpool2d, MaxPoolCfg};
use lf_yolo_core::params::{Initializer, ParamStore};
use lf_yolo_core::tensor::Conv2dCfg;
use lf_yolo_core::train::{train, TrainConfig};
use rand::Rng;

fn verdict(name: &str, pass: bool, detail: &str) -> bool {
    println!(
        "ACCEPTANCE {name}: {} -- {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

#[test]
fn residual_baseline_complexity() {
    let t0 = Instant::now();
    let block = ResidualRef::new("ref", 128, 256).unwrap();
    let report = analyze_block(&block.plan(), (208, 208));
    let weights = report.conv_weight_params();
    let macs_g = report.total_macs() as f64 / 1e9;
    let elapsed = t0.elapsed();

    let weights_ok = weights == 622_592;
    let prints_ok = report.params_m() == 0.6;
    let macs_ok = (macs_g - 27.0).abs() / 27.0 <= 0.03;
    let time_ok = elapsed.as_secs_f64() < 1.0;
    let pass = verdict(
        "residual_baseline_complexity",
        weights_ok && prints_ok && macs_ok && time_ok,
        &format!(
            "conv weights {weights} (expect 622592), prints {:.1}M, {macs_g:.3}G MACs vs 27.0G (tol 3%), {elapsed:?}",
            report.params_m()
        ),
    );
    assert!(pass);
}

#[test]
fn efe_block_complexity() {
    let t0 = Instant::now();
    let block = Efe::new("efe", EfeSpec::new(128, 256)).unwrap();
    let report = analyze_block(&block.plan(), (208, 208));
    let macs_g = report.total_macs() as f64 / 1e9;
    let elapsed = t0.elapsed();

    let prints_ok = report.params_m() == 0.2;
    let macs_ok = (macs_g - 9.1).abs() / 9.1 <= 0.10;
    let time_ok = elapsed.as_secs_f64() < 1.0;
    let pass = verdict(
        "efe_block_complexity",
        prints_ok && macs_ok && time_ok,
        &format!(
            "conv weights {} -> prints {:.1}M (expect 0.2), {macs_g:.3}G MACs vs 9.1G (tol 10%), {elapsed:?}; reconstruction: dense-block internals unstated",
            report.conv_weight_params(),
            report.params_m()
        ),
    );
    assert!(pass);
}

/// Known-red criterion: the architecture table and the per-block complexity
/// table jointly contradict the whole-model budget claimed by the same
/// source (its block list at the anchored per-block costs already exceeds
/// the budget in the backbone alone). Asserted faithfully, not weakened.
#[test]
fn whole_model_budget() {
    let full = analyze_model(&Model::new(ModelConfig::default()).unwrap());
    let half = analyze_model(
        &Model::new(ModelConfig::default().with_multiplier(0.5).unwrap()).unwrap(),
    );
    let params_m = full.total_params() as f64 / 1e6;
    let macs_g = full.total_macs() as f64 / 1e9;
    let half_params_m = half.total_params() as f64 / 1e6;

    let params_ok = (params_m - 7.3).abs() / 7.3 <= 0.15;
    let macs_ok = (macs_g - 4.0).abs() / 4.0 <= 0.20;
    let half_ok = (half_params_m - 1.8).abs() / 1.8 <= 0.20;
    let pass = verdict(
        "whole_model_budget",
        params_ok && macs_ok && half_ok,
        &format!(
            "C=32: {params_m:.2}M params vs 7.3M +-15% ({}), {macs_g:.2}G MACs vs 4.0G +-20% ({}); C=16: {half_params_m:.2}M vs 1.8M +-20% ({})",
            if params_ok { "ok" } else { "out" },
            if macs_ok { "ok" } else { "out" },
            if half_ok { "ok" } else { "out" },
        ),
    );
    assert!(
        pass,
        "architecture table + per-block costs are jointly inconsistent with the published budget; see the analyzer output above"
    );
}

#[test]
fn rmf_channel_law() {
    use lf_yolo_core::blocks::{init_layers, Rmf, RmfSpec};
    let mut all_ok = true;
    let mut detail = String::new();
    for c_in in [64usize, 512, 1024] {
        let spec = RmfSpec::new(c_in);
        let structural = spec.out_channels() == 6 * c_in;
        // run the smallest real forward that exercises the full block
        let rmf = Rmf::new("r", spec).unwrap();
        let mut store = ParamStore::new();
        let mut init = Initializer::new(1);
        init_layers(&rmf.plan(), &mut store, &mut init).unwrap();
        let mut rng = seeded(c_in as u64);
        let x = rand_tensor(&mut rng, (1, c_in, 2, 2));
        let mut ex = InferExec::new(&store);
        let xv = ex.input(x);
        let y = rmf.forward(&mut ex, &xv).unwrap();
        let forward_ok = y.dims() == (1, 6 * c_in, 2, 2);
        all_ok &= structural && forward_ok;
        detail.push_str(&format!("{c_in}->{} ", y.dims().1));
    }
    let pass = verdict("rmf_channel_law", all_ok, &format!("output channels: {detail}(expect 6x input, exact)"));
    assert!(pass);
}

#[test]
fn backbone_shape_trace() {
    let mut all_ok = true;
    for hw in [320usize, 640] {
        let cfg = ModelConfig {
            input_size: (hw, hw),
            anchors: default_anchors((hw, hw)),
            ..ModelConfig::default()
        };
        let model = Model::new(cfg).unwrap();
        let shapes = model.stage_shapes();
        let expect = |name: &str, div: usize| {
            let s = shapes.iter().find(|(n, _)| n == name).unwrap().1;
            (s.1, s.2) == (hw / div, hw / div)
        };
        all_ok &= expect("s1", 1)
            && expect("s2", 2)
            && expect("s3", 2)
            && expect("s4", 4)
            && expect("s6", 4)
            && expect("s7", 8)
            && expect("s11", 8)
            && expect("s12", 16)
            && expect("s16", 16)
            && expect("s17", 32)
            && expect("s19", 32)
            && expect("s20", 32);
    }
    let pass = verdict(
        "backbone_shape_trace",
        all_ok,
        "spatial column H/2..H/32 reproduced exactly for H = W in {320, 640}",
    );
    assert!(pass);
}

#[test]
fn oracle_equivalence() {
    let mut rng = seeded(113);
    let mut cases = 0;
    let mut worst: f64 = 0.0;

    // conv over the full (stride, padding, dilation, groups) matrix
    for stride in [1usize, 2] {
        for padding in [0usize, 1, 2] {
            for dilation in [1usize, 2, 5] {
                for depthwise in [false, true] {
                    for _ in 0..3 {
                        let c_in = 2 * rng.random_range(1..3usize);
                        let k = *[1usize, 3].get(rng.random_range(0..2usize)).unwrap();
                        let need = dilation * (k - 1) + 1;
                        let h = need + rng.random_range(2..6usize);
                        let w = need + rng.random_range(2..6usize);
                        let (groups, c_in_g, c_out) =
                            if depthwise { (c_in, 1, c_in) } else { (1, c_in, 4) };
                        let x = rand_tensor(&mut rng, (1, c_in, h, w));
                        let wt = rand_tensor(&mut rng, (c_out, c_in_g, k, k));
                        let cfg = Conv2dCfg { groups, stride, dilation, padding };
                        let got = conv2d(&x, &wt, None, &cfg).unwrap();
                        let want = conv2d_oracle(&x, &wt, None, &cfg);
                        worst = worst.max(max_rel_diff(&got, &want));
                        cases += 1;
                    }
                }
            }
        }
    }
    // maxpool
    for _ in 0..20 {
        let x = rand_tensor(&mut rng, (1, 2, 7, 7));
        let (got, _) = maxpool2d(&x, &MaxPoolCfg::same(5).unwrap()).unwrap();
        let want = maxpool_oracle(&x, 5, 1, 2);
        worst = worst.max(max_rel_diff(&got, &want));
        cases += 1;
    }
    // ghost and dilated-ghost against composed oracles, d=1 bit-equality
    use lf_yolo_core::blocks::init_layers;
    let mut bit_exact = true;
    for d in [1usize, 5, 9] {
        let spec = GhostSpec::new(4, 6).with_dilation(d);
        let gc = GhostConv::new("g", spec).unwrap();
        let mut store = ParamStore::new();
        let mut init = Initializer::new(d as u64);
        init_layers(&gc.plan(), &mut store, &mut init).unwrap();
        let x = rand_tensor(&mut rng, (1, 4, 2 * d + 3, 2 * d + 3));
        let mut ex = InferExec::new(&store);
        let xv = ex.input(x.clone());
        let y = gc.forward(&mut ex, &xv).unwrap();
        // composed: primary conv oracle + cheap dw conv oracle + BN + leaky
        let primary = conv2d_oracle(&x, store.get("g.primary.weight").unwrap(), None, &Conv2dCfg::same(1, 1));
        let cheap_cfg = Conv2dCfg::same(3, d).with_groups(3);
        let ghosts = conv2d_oracle(&primary, store.get("g.cheap.weight").unwrap(), None, &cheap_cfg);
        let merged = lf_yolo_core::ops::concat_channels(&[&primary, &ghosts]).unwrap();
        // fresh-identity BN leaves leaky(x / sqrt(1 + eps))
        let eps = lf_yolo_core::params::BN_EPS;
        let want = lf_yolo_core::ops::map_unary(&merged, |v| {
            let n = v / (1.0 + eps).sqrt();
            if n >= 0.0 {
                n
            } else {
                0.1 * n
            }
        });
        worst = worst.max(max_rel_diff(&(*y).clone(), &want));
        cases += 1;
        if d == 1 {
            let plain = GhostConv::new("g", GhostSpec::new(4, 6)).unwrap();
            let mut ex2 = InferExec::new(&store);
            let xv2 = ex2.input(x.clone());
            let y2 = plain.forward(&mut ex2, &xv2).unwrap();
            bit_exact &= y
                .data()
                .iter()
                .zip(y2.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        }
    }

    let pass = verdict(
        "oracle_equivalence",
        cases >= 100 && worst < 1e-12 && bit_exact,
        &format!("{cases} randomized cases, worst rel diff {worst:.2e} (tol 1e-12), gd(d=1) == ghost bit-exact: {bit_exact}"),
    );
    assert!(pass);
}

#[test]
fn gradient_suite() {
    let t0 = Instant::now();
    let checks = run_suite(0, None, 0.0).unwrap();
    let elapsed = t0.elapsed();
    let all_pass = checks.iter().all(|c| c.passed());
    let worst = checks
        .iter()
        .max_by(|a, b| {
            (a.max_rel_err / a.threshold)
                .partial_cmp(&(b.max_rel_err / b.threshold))
                .unwrap()
        })
        .unwrap();
    let time_ok = elapsed.as_secs() < 120;
    let pass = verdict(
        "gradient_suite",
        all_pass && time_ok,
        &format!(
            "{} blocks at 64-bit, worst {} = {:.2e} (threshold {:.0e}), {elapsed:?} (< 2 min)",
            checks.len(),
            worst.name,
            worst.max_rel_err,
            worst.threshold
        ),
    );
    assert!(pass);
}

#[test]
fn evaluator_equivalence() {
    // hand case: 2 GTs, ranked flags (TP, FP, TP) -> AP = 5/6
    let g1 = PixelBox { x_min: 0.0, y_min: 0.0, x_max: 10.0, y_max: 10.0 };
    let g2 = PixelBox { x_min: 50.0, y_min: 50.0, x_max: 60.0, y_max: 60.0 };
    let rec = EvalRecord {
        detections: vec![
            Detection { class_id: 0, score: 0.9, bbox: g1 },
            Detection {
                class_id: 0,
                score: 0.8,
                bbox: PixelBox { x_min: 30.0, y_min: 0.0, x_max: 40.0, y_max: 10.0 },
            },
            Detection { class_id: 0, score: 0.7, bbox: g2 },
        ],
        ground_truths: vec![(0, g1), (0, g2)],
    };
    let hand = ap50(&[rec], 0).unwrap();
    let hand_ok = (hand - 5.0 / 6.0).abs() < 1e-12;

    // randomized instances vs threshold enumeration: the dedicated oracle
    // test does the heavy sweep; spot-check the pooled multi-image path here
    let mut rng = seeded(127);
    let mut max_diff = 0.0f64;
    for _ in 0..50 {
        let mut records = Vec::new();
        for _ in 0..2 {
            let n_gt = rng.random_range(1..=5usize);
            let gts: Vec<(usize, PixelBox)> = (0..n_gt)
                .map(|_| {
                    let x = rng.random_range(0.0..60.0);
                    let y = rng.random_range(0.0..60.0);
                    (0, PixelBox { x_min: x, y_min: y, x_max: x + 10.0, y_max: y + 10.0 })
                })
                .collect();
            let dets: Vec<Detection> = (0..rng.random_range(0..=10usize))
                .map(|_| {
                    let (_, g) = gts[rng.random_range(0..gts.len())];
                    let dx = rng.random_range(-6.0..6.0);
                    Detection {
                        class_id: 0,
                        score: rng.random_range(0.01..0.99),
                        bbox: PixelBox {
                            x_min: g.x_min + dx,
                            y_min: g.y_min,
                            x_max: g.x_max + dx,
                            y_max: g.y_max,
                        },
                    }
                })
                .collect();
            records.push(EvalRecord { detections: dets, ground_truths: gts });
        }
        // threshold enumeration: AP must equal the rank sweep exactly
        let module = ap50(&records, 0).unwrap();
        let mut flags: Vec<(f64, bool)> = Vec::new();
        let mut num_gt = 0;
        for r in &records {
            let gts: Vec<PixelBox> = r.ground_truths.iter().map(|(_, b)| *b).collect();
            num_gt += gts.len();
            flags.extend(lf_yolo_core::eval::match_detections(&r.detections, &gts, 0.5));
        }
        flags.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut thresholds: Vec<f64> = flags.iter().map(|f| f.0).collect();
        thresholds.dedup();
        let mut points: Vec<(f64, f64)> = Vec::new();
        for &t in &thresholds {
            let sub: Vec<_> = flags.iter().filter(|(s, _)| *s >= t).collect();
            let tp = sub.iter().filter(|(_, k)| *k).count();
            points.push((tp as f64 / num_gt as f64, tp as f64 / sub.len() as f64));
        }
        let mut brute = 0.0;
        let mut prev = 0.0;
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for i in 0..points.len() {
            if points[i].0 > prev {
                let p = points
                    .iter()
                    .filter(|(r, _)| *r >= points[i].0)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
                brute += (points[i].0 - prev) * p;
                prev = points[i].0;
            }
        }
        max_diff = max_diff.max((module - brute).abs());
    }
    let pass = verdict(
        "evaluator_equivalence",
        hand_ok && max_diff == 0.0,
        &format!("hand case AP {hand:.6} (expect 0.833333), brute-force max |diff| {max_diff:.2e} over 50 instances"),
    );
    assert!(pass);
}

#[test]
fn overfit_sanity() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_sample(dir.path(), "a", 64, 0, (0.36, 0.38), (0.16, 0.12));
    write_synthetic_sample(dir.path(), "b", 64, 0, (0.64, 0.6), (0.14, 0.11));
    write_synthetic_sample(dir.path(), "c", 64, 1, (0.6, 0.36), (0.15, 0.12));
    write_synthetic_sample(dir.path(), "d", 64, 1, (0.37, 0.63), (0.14, 0.12));
    let manifest = write_manifest(dir.path(), &["a", "b", "c", "d"]);
    let samples = load_manifest(&manifest, 3).unwrap();

    let cfg = ModelConfig {
        width_c: 8,
        num_classes: 3,
        input_size: (64, 64),
        anchors: default_anchors((64, 64)),
        ..ModelConfig::default()
    };
    let model = Model::new(cfg).unwrap();
    let mut store = model.init_params(0).unwrap();
    let tc = TrainConfig {
        epochs: 500,
        lr: 0.01,
        seed: 0,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let result = train(&model, &mut store, &samples, &tc).unwrap();
    let steps = result.rows.len();

    let mut records = Vec::new();
    for s in &samples {
        let img = load_image(&s.image, (64, 64)).unwrap();
        let dets = detect(&model, &store, &img, 0.001, 0.45).unwrap();
        records.push(EvalRecord {
            detections: dets,
            ground_truths: s
                .boxes
                .iter()
                .map(|b| (b.class_id, b.to_pixels((64, 64))))
                .collect(),
        });
    }
    let report = map50(&records, 3).unwrap();
    let elapsed = t0.elapsed();
    let pass = verdict(
        "overfit_sanity",
        report.map50 == 1.0 && steps <= 500 && elapsed.as_secs() < 600,
        &format!(
            "training-set mAP50 {} after {steps} steps at C=8, {elapsed:?} (< 10 min)",
            report.map50
        ),
    );
    assert!(pass);
}

#[test]
fn desk_scale_exclusions() {
    let pass = verdict(
        "desk_scale_exclusions",
        true,
        "not reproduced by design: weld-set mAP50 92.9 and its per-class values (proprietary data), \
         COCO mAP50 table (full-scale training), FPS figures (hardware-bound); replaced by the property suites above",
    );
    assert!(pass);
}

#[test]
fn serialization_round_trip() {
    let model = Model::new(ModelConfig {
        width_c: 8,
        input_size: (64, 64),
        anchors: default_anchors((64, 64)),
        ..ModelConfig::default()
    })
    .unwrap();
    let store = model.init_params(3).unwrap();
    let bytes_a = encode_weights(&store).unwrap();
    let bytes_b = encode_weights(&store).unwrap();
    let byte_identical = bytes_a == bytes_b;

    let loaded = decode_weights(&bytes_a).unwrap();
    let reencoded = encode_weights(&loaded).unwrap();
    let stable = reencoded == bytes_a;
    let mut value_identical = true;
    for (name, t) in store.iter() {
        let l = loaded.get(name).unwrap();
        value_identical &= t
            .data()
            .iter()
            .zip(l.data())
            .all(|(a, b)| (*a as f32).to_bits() == (*b as f32).to_bits());
    }
    let pass = verdict(
        "serialization_round_trip",
        byte_identical && stable && value_identical,
        &format!(
            "{} params, cross-run byte-identical: {byte_identical}, reload+re-encode stable: {stable}, values identical at f32: {value_identical}",
            store.total_elements()
        ),
    );
    assert!(pass);
}
