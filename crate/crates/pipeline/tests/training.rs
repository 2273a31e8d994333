//! Training-phase integration tests on a small synthetic dataset whose
//! heatmaps are analytically tied to the poses, so the RF path has
//! something real to learn.

use ndarray::{Array2, Array3};

use rfpose_core::preprocess::{default_grid_h, default_grid_v};
use rfpose_core::radar::{walker_pose, ArrayConfig, SceneParams, FRAME_RATE_HZ};
use rfpose_pipeline::dataset::DatasetMeta;
use rfpose_pipeline::{
    compute_zp_targets, evaluate_rf, fine_tune, train_pose_embedding, train_rf_transport,
    CheckpointSink, KeypointPredictor, MetricsLog, RfDataset, RfEncoder, TrainConfig,
};

const MAP_H: (usize, usize) = (16, 16);
const MAP_V: (usize, usize) = (16, 10);

/// Builds an in-memory dataset: walker poses plus idealized heatmaps (a
/// Gaussian blob at the pelvis ground position / neck height).
fn tiny_dataset(n: usize, seed: u64) -> RfDataset {
    let scene = SceneParams { seed, ..SceneParams::default() };
    let poses: Vec<_> =
        (0..n).map(|i| walker_pose(i as f64 / FRAME_RATE_HZ, &scene).unwrap().keypoints).collect();

    let blob = |dims: (usize, usize), cx: f64, cy: f64| -> Vec<f32> {
        let mut out = Vec::with_capacity(dims.0 * dims.1);
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                let dx = i as f64 / dims.0 as f64 - cx;
                let dy = j as f64 / dims.1 as f64 - cy;
                out.push((-(dx * dx + dy * dy) / 0.02).exp() as f32);
            }
        }
        out
    };
    let mut hh = Vec::new();
    let mut vv = Vec::new();
    for p in &poses {
        let pelvis = [(p.keypoint(8)[0] + p.keypoint(9)[0]) / 2.0, (p.keypoint(8)[1] + p.keypoint(9)[1]) / 2.0];
        let neck_z = p.keypoint(1)[2];
        // Normalize scene coords into [0, 1] for the blob centers.
        hh.extend(blob(MAP_H, (pelvis[0] + 2.0) / 4.0, (pelvis[1] - 0.3) / 4.0));
        vv.extend(blob(MAP_V, (pelvis[1] - 0.3) / 4.0, neck_z / 2.5));
    }
    let meta = DatasetMeta {
        kind: "preprocessed".into(),
        seed,
        frame_rate_hz: FRAME_RATE_HZ,
        scene,
        array_h: ArrayConfig::default_horizontal(),
        array_v: ArrayConfig::default_vertical(),
        grid_h: default_grid_h(),
        grid_v: default_grid_v(),
        n_frames: n,
    };
    RfDataset {
        heatmaps_h: Array3::from_shape_vec((n, MAP_H.0, MAP_H.1), hh).unwrap(),
        heatmaps_v: Array3::from_shape_vec((n, MAP_V.0, MAP_V.1), vv).unwrap(),
        poses,
        timestamps: (0..n).map(|i| i as f64 / FRAME_RATE_HZ).collect(),
        meta,
    }
}


/// Same dataset with 8x8 / 8x6 maps; keeps dense training loops cheap.
fn tiny_dataset_small_maps(n: usize, seed: u64) -> RfDataset {
    let mut data = tiny_dataset(n, seed);
    let shrink = |maps: &Array3<f32>, h: usize, w: usize| {
        let (count, mh, mw) = maps.dim();
        let mut out = Array3::<f32>::zeros((count, h, w));
        for i in 0..count {
            for a in 0..h {
                for b in 0..w {
                    out[(i, a, b)] = maps[(i, a * mh / h, b * mw / w)];
                }
            }
        }
        out
    };
    data.heatmaps_h = shrink(&data.heatmaps_h, 8, 8);
    data.heatmaps_v = shrink(&data.heatmaps_v, 8, 6);
    data
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs_pose: 2,
        epochs_ot: 2,
        epochs_finetune: 2,
        seed,
        pose_extent: 1.0,
        pose_cell: 0.125,
        ..TrainConfig::default()
    }
}

#[test]
fn phase1_smoke_loss_decreases() {
    let data = tiny_dataset(100, 5);
    let cfg = tiny_config(5);
    let mut log = MetricsLog::default();
    train_pose_embedding(&data, &cfg, &mut log, &CheckpointSink::none()).unwrap();
    assert_eq!(log.rows.len(), 2);
    assert!(
        log.rows[1].loss_total < log.rows[0].loss_total,
        "epoch losses {} -> {}",
        log.rows[0].loss_total,
        log.rows[1].loss_total
    );
}

#[test]
fn phase1_is_bit_reproducible() {
    let run = || {
        let data = tiny_dataset(60, 9);
        let cfg = TrainConfig { batch_size: 8, epochs_pose: 2, ..tiny_config(9) };
        let mut log = MetricsLog::default();
        train_pose_embedding(&data, &cfg, &mut log, &CheckpointSink::none()).unwrap();
        log.to_csv()
    };
    assert_eq!(run(), run(), "same seed must reproduce the metrics byte for byte");
}

#[test]
fn phase2_smoke_and_phase_isolation() {
    let data = tiny_dataset(100, 6);
    let cfg = tiny_config(6);
    let mut log = MetricsLog::default();
    let (mut ep, mut f) =
        train_pose_embedding(&data, &cfg, &mut log, &CheckpointSink::none()).unwrap();
    let ep_hash = ep.stack.param_hash();
    let f_hash = f.stack.param_hash();

    let (train, _) = data.split();
    let train_indices: Vec<usize> = train.collect();
    let zp = compute_zp_targets(&data, &cfg, &mut ep, &train_indices).unwrap();
    assert_eq!(
        ep.stack.param_hash(),
        ep_hash,
        "computing targets must not touch the pose encoder"
    );

    let mut rng = rfpose_neural::layers::init_rng(cfg.seed + 1);
    let mut er = RfEncoder::new([MAP_H.0, MAP_H.1], [MAP_V.0, MAP_V.1], &mut rng).unwrap();
    let mut log2 = MetricsLog::default();
    train_rf_transport(&data, &zp, &cfg, &mut er, Some(&mut f), &mut log2, &CheckpointSink::none())
        .unwrap();
    assert_eq!(log2.rows.len(), 2);
    assert!(
        log2.rows[1].loss_ot < log2.rows[0].loss_ot,
        "OT loss should fall: {} -> {}",
        log2.rows[0].loss_ot,
        log2.rows[1].loss_ot
    );
    // Phase 2 must leave the pose encoder and predictor untouched.
    assert_eq!(ep.stack.param_hash(), ep_hash);
    assert_eq!(f.stack.param_hash(), f_hash);

    let mut log3 = MetricsLog::default();
    fine_tune(&data, &cfg, &mut er, &mut f, &mut log3, &CheckpointSink::none()).unwrap();
    assert!(
        log3.rows[1].loss_total < log3.rows[0].loss_total,
        "fine-tune loss should fall: {} -> {}",
        log3.rows[0].loss_total,
        log3.rows[1].loss_total
    );
    // Phase 3 must leave the pose encoder untouched (the predictor is
    // trained here by design).
    assert_eq!(ep.stack.param_hash(), ep_hash);
    assert_ne!(f.stack.param_hash(), f_hash, "fine-tuning must train the predictor");
}

#[test]
fn phase2_learns_constant_degenerate_target() {
    // When every pose feature target is the same constant vector, the
    // RF encoder can drive the OT loss toward zero by learning that
    // constant; the loss must fall below 1% of its value at
    // initialization.
    let data = tiny_dataset_small_maps(200, 7);
    let mut cfg = tiny_config(7);
    cfg.batch_size = 8;
    cfg.epochs_ot = 80;
    let (train, _) = data.split();
    let n_train = train.len();
    let mut zp = ndarray::Array2::zeros((n_train, rfpose_core::types::FEATURE_DIM));
    zp.fill(0.12);
    let mut rng = rfpose_neural::layers::init_rng(17);
    let dims_h = [data.heatmaps_h.dim().1, data.heatmaps_h.dim().2];
    let dims_v = [data.heatmaps_v.dim().1, data.heatmaps_v.dim().2];
    let mut er = RfEncoder::new(dims_h, dims_v, &mut rng).unwrap();

    // Loss at initialization, measured without updates.
    let initial = {
        use rfpose_neural::{Graph, Mode};
        use rfpose_pipeline::model::heatmap_batch;
        let batch: Vec<usize> = train.clone().take(cfg.batch_size).collect();
        let mut g = Graph::<f32>::new();
        let maps_h: Vec<_> = batch.iter().map(|&i| data.heatmap_h(i)).collect();
        let maps_v: Vec<_> = batch.iter().map(|&i| data.heatmap_v(i)).collect();
        let hh = heatmap_batch(&mut g, &maps_h).unwrap();
        let hv = heatmap_batch(&mut g, &maps_v).unwrap();
        let (zr, _) = er.forward(&mut g, hh, hv, Mode::Train).unwrap();
        let zp_rows = zp.slice(ndarray::s![..cfg.batch_size, ..]).to_owned();
        let (loss, _) = rfpose_pipeline::ot_batch_loss(&mut g, zr, &zp_rows).unwrap();
        g.scalar_value(loss).unwrap() as f64
    };

    let mut log = MetricsLog::default();
    train_rf_transport(&data, &zp, &cfg, &mut er, None, &mut log, &CheckpointSink::none())
        .unwrap();
    let last = log.rows.last().unwrap().loss_ot;
    eprintln!("degenerate-target: init {initial} -> final {last} ({:.3}%)", 100.0 * last / initial);
    assert!(
        last < initial * 0.01,
        "constant target should be learnable: init {initial} -> {last}"
    );
}

#[test]
fn fine_tune_improves_heldout_sle() {
    let data = tiny_dataset(120, 8);
    let mut cfg = tiny_config(8);
    cfg.epochs_pose = 6;
    cfg.epochs_ot = 4;
    cfg.epochs_finetune = 6;
    let mut log = MetricsLog::default();
    let (mut ep, mut f) =
        train_pose_embedding(&data, &cfg, &mut log, &CheckpointSink::none()).unwrap();
    let (train, test) = data.split();
    let train_indices: Vec<usize> = train.collect();
    let zp = compute_zp_targets(&data, &cfg, &mut ep, &train_indices).unwrap();
    let mut rng = rfpose_neural::layers::init_rng(cfg.seed + 1);
    let mut er = RfEncoder::new([MAP_H.0, MAP_H.1], [MAP_V.0, MAP_V.1], &mut rng).unwrap();
    train_rf_transport(&data, &zp, &cfg, &mut er, None, &mut log, &CheckpointSink::none())
        .unwrap();
    let (before, _) = evaluate_rf(&data, &mut er, &mut f, &test).unwrap();
    fine_tune(&data, &cfg, &mut er, &mut f, &mut log, &CheckpointSink::none()).unwrap();
    let (after, _) = evaluate_rf(&data, &mut er, &mut f, &test).unwrap();
    assert!(
        after.overall_cm < before.overall_cm,
        "fine-tuning should improve held-out SLE: {} -> {} cm",
        before.overall_cm,
        after.overall_cm
    );
}

#[test]
fn predictions_are_finite_and_in_scene_bounds_after_training() {
    let data = tiny_dataset(120, 13);
    let mut cfg = tiny_config(13);
    cfg.epochs_pose = 4;
    cfg.epochs_finetune = 4;
    let mut log = MetricsLog::default();
    let (mut ep, mut f) =
        train_pose_embedding(&data, &cfg, &mut log, &CheckpointSink::none()).unwrap();
    let (train, test) = data.split();
    let train_indices: Vec<usize> = train.collect();
    let zp = compute_zp_targets(&data, &cfg, &mut ep, &train_indices).unwrap();
    let mut rng = rfpose_neural::layers::init_rng(cfg.seed + 1);
    let mut er = RfEncoder::new([MAP_H.0, MAP_H.1], [MAP_V.0, MAP_V.1], &mut rng).unwrap();
    train_rf_transport(&data, &zp, &cfg, &mut er, None, &mut log, &CheckpointSink::none())
        .unwrap();
    fine_tune(&data, &cfg, &mut er, &mut f, &mut log, &CheckpointSink::none()).unwrap();
    let (_, preds) = evaluate_rf(&data, &mut er, &mut f, &test).unwrap();
    // Slack beyond the scene box: the regressor is unconstrained, but
    // trained outputs should stay near the data distribution.
    let bounds = &data.meta.scene.bounds;
    for p in &preds {
        for kp in p.coords() {
            assert!(kp.iter().all(|v| v.is_finite()));
            assert!(kp[0] > bounds.min[0] - 1.0 && kp[0] < bounds.max[0] + 1.0);
            assert!(kp[1] > bounds.min[1] - 1.0 && kp[1] < bounds.max[1] + 1.0);
            assert!(kp[2] > bounds.min[2] - 1.0 && kp[2] < bounds.max[2] + 1.0);
        }
    }
}
