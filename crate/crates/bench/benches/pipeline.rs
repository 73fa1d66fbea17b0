use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use signpose_core::anchors::{generate_default_boxes, GridSpec, RegressionCodec};
use signpose_core::detector::{detect, nms, DetectorConfig};
use signpose_core::evalkit::{evaluate, EvalConfig};
use signpose_core::geometry::{homography_from_correspondences, Point2};
use signpose_core::harness::{detect_file, generate_synthetic_dataset, oracle_predict, OracleConfig};
use signpose_core::mapsim::{run_experiment, SimScene};
use signpose_core::templates::{template_vertices_to_boundary, ShapeClass};
use signpose_core::Quad;

fn geometry(c: &mut Criterion) {
    let src = Quad::UNIT.0;
    let dst = [
        Point2::new(10.0, 12.0),
        Point2::new(90.0, 8.0),
        Point2::new(95.0, 80.0),
        Point2::new(6.0, 85.0),
    ];
    c.bench_function("homography_4pt", |b| {
        b.iter(|| homography_from_correspondences(black_box(&src), black_box(&dst)).unwrap())
    });
    let quad = Quad(dst);
    c.bench_function("octagon_boundary", |b| {
        b.iter(|| template_vertices_to_boundary(black_box(&quad), ShapeClass::Octagon).unwrap())
    });
}

fn anchors(c: &mut Criterion) {
    let spec = GridSpec::default();
    c.bench_function("default_boxes_800x450", |b| b.iter(|| generate_default_boxes(black_box(&spec)).unwrap()));
}

fn detection(c: &mut Criterion) {
    let cfg = OracleConfig {
        scene_count: 4,
        sigma_pred: 2.0,
        ..OracleConfig::default()
    };
    let images = generate_synthetic_dataset(&cfg).unwrap();
    let spec = GridSpec::default();
    let preds = oracle_predict(&images, &spec, &RegressionCodec::default(), &cfg).unwrap();
    let dcfg = DetectorConfig::default();
    let grid = preds.grid(0).unwrap();
    c.bench_function("detect_one_image", |b| b.iter(|| detect(black_box(&grid), &spec, &dcfg).unwrap()));

    let raw = signpose_core::detector::decode_predictions(&grid, &spec, &dcfg.codec, dcfg.score_threshold).unwrap();
    c.bench_function("nms_one_image", |b| b.iter(|| nms(black_box(&raw), dcfg.nms_iou)));

    let dets = detect_file(&preds, &dcfg).unwrap();
    let eval_images = dets.pair_with(&images).unwrap();
    let ecfg = EvalConfig::default();
    c.bench_function("evaluate_4_images", |b| {
        b.iter_batched(|| eval_images.clone(), |e| evaluate(&e, &ecfg).unwrap(), BatchSize::SmallInput)
    });
}

fn simulation(c: &mut Criterion) {
    let scene = SimScene {
        trials: 20,
        ..SimScene::default()
    };
    let mut group = c.benchmark_group("mapsim");
    group.sample_size(10);
    group.bench_function("experiment_20_trials", |b| b.iter(|| run_experiment(black_box(&scene)).unwrap()));
    group.finish();
}

criterion_group!(benches, geometry, anchors, detection, simulation);
criterion_main!(benches);
