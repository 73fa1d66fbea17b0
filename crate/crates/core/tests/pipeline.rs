//! End-to-end behavior of the harness: determinism, file formats and the
//! synth → predict → detect → evaluate chain.

mod common;

use signpose_core::anchors::{GridSpec, RegressionCodec};
use signpose_core::augment::{augment_dataset, prune_unusable, AugmentConfig};
use signpose_core::detector::DetectorConfig;
use signpose_core::evalkit::{evaluate, map_vs_iou_sweep, sweep_to_csv, EvalConfig, SWEEP_CSV_HEADER};
use signpose_core::harness::{
    detect_file, generate_synthetic_dataset, oracle_predict, read_sidecar, write_sidecar, DatasetFile, DetectionFile,
    OracleConfig, PredictionFile,
};
use signpose_core::mapsim::{rows_to_csv, run_experiment, SimScene, CSV_HEADER};

#[test]
fn synthetic_scenes_regenerate_byte_identically() {
    let cfg = OracleConfig {
        scene_count: 500,
        rng_seed: 12345,
        ..OracleConfig::default()
    };
    let a = serde_json::to_vec(&DatasetFile::from_images(&generate_synthetic_dataset(&cfg).unwrap())).unwrap();
    let b = serde_json::to_vec(&DatasetFile::from_images(&generate_synthetic_dataset(&cfg).unwrap())).unwrap();
    assert_eq!(a, b);
    let other = OracleConfig { rng_seed: 12346, ..cfg };
    let c = serde_json::to_vec(&DatasetFile::from_images(&generate_synthetic_dataset(&other).unwrap())).unwrap();
    assert_ne!(a, c);
}

#[test]
fn generated_images_pass_pruning() {
    let cfg = OracleConfig {
        scene_count: 200,
        ..OracleConfig::default()
    };
    for img in generate_synthetic_dataset(&cfg).unwrap() {
        assert!(prune_unusable(&img, 1.0).usable, "{}", img.id);
    }
}

#[test]
fn files_round_trip_through_json() {
    let cfg = OracleConfig {
        scene_count: 4,
        ..OracleConfig::default()
    };
    let images = generate_synthetic_dataset(&cfg).unwrap();
    let dataset = DatasetFile::from_images(&images);
    let text = serde_json::to_string(&dataset).unwrap();
    let reloaded = DatasetFile::from_json(&text).unwrap();
    assert_eq!(reloaded.to_images().unwrap(), images);

    let spec = GridSpec::default();
    let preds = oracle_predict(&images, &spec, &RegressionCodec::default(), &cfg).unwrap();
    let ptext = serde_json::to_string(&preds).unwrap();
    let preloaded: PredictionFile = serde_json::from_str(&ptext).unwrap();
    assert_eq!(preloaded, preds);

    let dets = detect_file(&preloaded, &DetectorConfig::default()).unwrap();
    let dtext = serde_json::to_string(&dets).unwrap();
    let dreloaded: DetectionFile = serde_json::from_str(&dtext).unwrap();
    assert_eq!(dreloaded, dets);
    let eval = dreloaded.pair_with(&images).unwrap();
    let report = evaluate(&eval, &EvalConfig::default()).unwrap();
    assert!(report.map.iter().all(|m| m.map == Some(1.0)));
}

#[test]
fn sidecar_predictions_detect_within_float_precision() {
    let cfg = OracleConfig {
        scene_count: 3,
        ..OracleConfig::default()
    };
    let images = generate_synthetic_dataset(&cfg).unwrap();
    let spec = GridSpec::default();
    let preds = oracle_predict(&images, &spec, &RegressionCodec::default(), &cfg).unwrap();
    let mut header = preds.clone();
    let mut bytes = Vec::new();
    write_sidecar(&mut header, &mut bytes).unwrap();
    assert_eq!(bytes.len(), images.len() * spec.box_count() * 12 * 4);
    read_sidecar(&mut header, bytes.as_slice()).unwrap();
    let full = detect_file(&preds, &DetectorConfig::default()).unwrap();
    let approx = detect_file(&header, &DetectorConfig::default()).unwrap();
    for (a, b) in full.images.iter().zip(&approx.images) {
        assert_eq!(a.detections.len(), b.detections.len());
        for (x, y) in a.detections.iter().zip(&b.detections) {
            assert_eq!(x.shape, y.shape);
            assert!(x.quad.max_corner_distance(&y.quad) < 1e-3);
        }
    }
}

#[test]
fn noisy_predictions_lower_high_iou_map() {
    let cfg = OracleConfig {
        scene_count: 60,
        sigma_pred: 3.0,
        rng_seed: 77,
        ..OracleConfig::default()
    };
    let images = generate_synthetic_dataset(&cfg).unwrap();
    let preds = oracle_predict(&images, &GridSpec::default(), &RegressionCodec::default(), &cfg).unwrap();
    let dets = detect_file(&preds, &DetectorConfig::default()).unwrap();
    let eval = dets.pair_with(&images).unwrap();
    let rows = map_vs_iou_sweep(&eval, &EvalConfig::default());
    assert_eq!(rows.len(), 10);
    assert!(rows.windows(2).all(|w| w[0].map >= w[1].map));
    assert!(rows[9].map < rows[0].map);
    let csv = sweep_to_csv(&rows);
    assert!(csv.starts_with(SWEEP_CSV_HEADER));
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn augmentation_is_reproducible_per_seed() {
    let cfg = OracleConfig {
        scene_count: 30,
        size_range: [70.0, 150.0],
        ..OracleConfig::default()
    };
    let images = generate_synthetic_dataset(&cfg).unwrap();
    let acfg = AugmentConfig {
        rng_seed: 5,
        ..AugmentConfig::default()
    };
    let out = augment_dataset(&images, &acfg).unwrap();
    assert_eq!(out.samples.len() + out.skipped.len(), images.len());
    assert!(!out.samples.is_empty());
    let a = serde_json::to_string(&out).unwrap();
    let b = serde_json::to_string(&augment_dataset(&images, &acfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mapsim_csv_has_one_row_per_theta_and_method() {
    let scene = SimScene {
        trials: 10,
        seed: 7,
        ..SimScene::default()
    };
    let rows = run_experiment(&scene).unwrap();
    assert_eq!(rows.len(), 42);
    let csv = rows_to_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), 42);
    assert_eq!(rows_to_csv(&run_experiment(&scene).unwrap()), csv);
}
