mod common;

use rand::seq::SliceRandom;
use rand::Rng;
use stflow::autodiff::{decode_checkpoint, encode_checkpoint, AdamConfig, ParamKind, ParamStore, Session};
use stflow::geom::{generate_scene, SceneSpec};
use stflow::nn::{predict, prepare_scene, BlockKind, NetworkConfig};
use stflow::train::{flow_loss, train_loop, LossConfig, TrainConfig};
use stflow::Matrix;

/// Loss value and gradient with respect to the prediction.
fn loss_and_grad(pred: &Matrix<f64>, gt: &Matrix<f32>, speed: &[f32], cfg: &LossConfig) -> (f64, Matrix<f64>) {
    let mut store = ParamStore::new();
    store.insert("pred", pred.clone(), ParamKind::Param).unwrap();
    let mut s = Session::new(&store, true);
    let p = s.param("pred").unwrap();
    let l = flow_loss(&mut s, p, gt, speed, cfg).unwrap();
    let out = s.finish(l).unwrap();
    let v = out.loss;
    out.apply(&mut store).unwrap();
    (v, store.grad("pred").unwrap().unwrap().clone())
}

/// Per-bin mean endpoint error, weighted over the non-empty bins.
fn reference_loss(pred: &Matrix<f64>, gt: &Matrix<f32>, speed: &[f32], cfg: &LossConfig) -> f64 {
    let mut bins = vec![(0.0, 0usize); cfg.bin_weights.len()];
    for (i, &s) in speed.iter().enumerate() {
        let b = cfg.speed_bin_edges.iter().filter(|&&e| s >= e).count();
        let e = (0..3).map(|k| (pred.get(i, k) - gt.get(i, k) as f64).powi(2)).sum::<f64>().sqrt();
        bins[b].0 += e;
        bins[b].1 += 1;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&(sum, n), &w) in bins.iter().zip(&cfg.bin_weights) {
        if n > 0 {
            num += w as f64 * sum / n as f64;
            den += w as f64;
        }
    }
    num / den
}

fn random_case(seed: u64, n: usize) -> (Matrix<f64>, Matrix<f32>, Vec<f32>) {
    let mut r = common::rng(seed);
    let pred = common::random_matrix(&mut r, n, 3, 1.0);
    let gt = common::random_matrix(&mut r, n, 3, 1.0).cast();
    let speed = (0..n).map(|_| r.random_range(0.0f32..3.0)).collect();
    (pred, gt, speed)
}

#[test]
fn loss_matches_the_binned_mean() {
    let cfg = LossConfig {
        speed_bin_edges: vec![0.05, 0.5, 2.0],
        bin_weights: vec![1.0, 2.0, 0.5, 3.0],
    };
    for seed in 0..10 {
        let (pred, gt, speed) = random_case(seed, 60);
        let (v, _) = loss_and_grad(&pred, &gt, &speed, &cfg);
        assert!((v - reference_loss(&pred, &gt, &speed, &cfg)).abs() < 1e-6);
    }
}

#[test]
fn loss_ignores_point_order() {
    let cfg = LossConfig::default();
    let (pred, gt, speed) = random_case(3, 50);
    let mut order: Vec<usize> = (0..50).collect();
    order.shuffle(&mut common::rng(4));
    let (a, ga) = loss_and_grad(&pred, &gt, &speed, &cfg);
    let sp: Vec<f32> = order.iter().map(|&i| speed[i]).collect();
    let (b, gb) = loss_and_grad(&pred.gather_rows(&order), &gt.gather_rows(&order), &sp, &cfg);
    assert!((a - b).abs() < 1e-6);
    assert!(ga.gather_rows(&order).max_abs_diff(&gb) < 1e-6);
}

#[test]
fn scaling_every_bin_weight_changes_nothing() {
    let (pred, gt, speed) = random_case(5, 40);
    let base = LossConfig::default();
    let doubled = LossConfig {
        bin_weights: base.bin_weights.iter().map(|w| 2.0 * w).collect(),
        ..base.clone()
    };
    let (a, ga) = loss_and_grad(&pred, &gt, &speed, &base);
    let (b, gb) = loss_and_grad(&pred, &gt, &speed, &doubled);
    assert!((a - b).abs() < 1e-6);
    assert!(ga.max_abs_diff(&gb) < 1e-6);
}

#[test]
fn empty_bins_drop_out_of_the_normalizer() {
    let cfg = LossConfig::default();
    // every point in the slowest bin: plain mean endpoint error
    let (pred, gt, _) = random_case(6, 30);
    let (v, _) = loss_and_grad(&pred, &gt, &[0.0; 30], &cfg);
    let mean = (0..30)
        .map(|i| (0..3).map(|k| (pred.get(i, k) - gt.get(i, k) as f64).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / 30.0;
    assert!((v - mean).abs() < 1e-6);
}

fn desk_scenes(cfg: &NetworkConfig, seeds: std::ops::Range<u64>) -> Vec<stflow::nn::PreparedScene> {
    seeds
        .map(|s| prepare_scene(&generate_scene(s, &SceneSpec::desk()).unwrap(), cfg).unwrap())
        .collect()
}

#[test]
fn zero_learning_rate_keeps_trainable_weights() {
    let cfg = NetworkConfig::desk(BlockKind::StdbB);
    let scenes = desk_scenes(&cfg, 0..2);
    let tc = TrainConfig {
        epochs: 2,
        adam: AdamConfig { lr: 0.0, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let init = stflow::nn::init_params(&cfg, tc.seed).unwrap();
    let out = train_loop(&scenes, &[], &cfg, &tc, Some(init.clone()), |_, _| {}).unwrap();
    let mut buffers_moved = false;
    for (name, m, kind) in init.iter() {
        let after = out.store.get(name).unwrap();
        match kind {
            ParamKind::Param => assert_eq!(after, m, "{name}"),
            ParamKind::Buffer => buffers_moved |= after != m,
        }
    }
    assert!(buffers_moved, "running statistics should still track batches");
}

#[test]
fn same_seed_same_run() {
    let cfg = NetworkConfig::desk(BlockKind::StdbD);
    let scenes = desk_scenes(&cfg, 10..12);
    let tc = TrainConfig { epochs: 2, seed: 9, ..TrainConfig::default() };
    let a = train_loop(&scenes, &[], &cfg, &tc, None, |_, _| {}).unwrap();
    let b = train_loop(&scenes, &[], &cfg, &tc, None, |_, _| {}).unwrap();
    assert_eq!(a.step_losses, b.step_losses);
    assert_eq!(a.history, b.history);
    let adam = AdamConfig::default();
    let json = serde_json::to_value(&cfg).unwrap();
    assert_eq!(
        encode_checkpoint(&a.store, &adam, json.clone()).unwrap(),
        encode_checkpoint(&b.store, &adam, json).unwrap()
    );
}

#[test]
fn one_scene_is_memorized() {
    let cfg = NetworkConfig::desk(BlockKind::StdbP);
    let scenes = desk_scenes(&cfg, 42..43);
    let tc = TrainConfig { epochs: 200, seed: 1, validate_every: 0, ..TrainConfig::default() };
    let out = train_loop(&scenes, &[], &cfg, &tc, None, |_, _| {}).unwrap();
    let first = out.step_losses[0];
    let last = *out.step_losses.last().unwrap();
    assert!(last < 0.2 * first, "loss {first} -> {last}");
}

#[test]
fn checkpoints_restore_predictions() {
    let cfg = NetworkConfig::desk(BlockKind::StdbB);
    let scenes = desk_scenes(&cfg, 20..21);
    let tc = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let out = train_loop(&scenes, &[], &cfg, &tc, None, |_, _| {}).unwrap();
    let bytes = encode_checkpoint(&out.store, &tc.adam, serde_json::to_value(&cfg).unwrap()).unwrap();
    let ck = decode_checkpoint(&bytes).unwrap();
    assert_eq!(ck.header.step, out.store.step());
    let restored: NetworkConfig = serde_json::from_value(ck.header.model.clone()).unwrap();
    assert_eq!(restored, cfg);
    let a = predict(&out.store, &cfg, &scenes[0]).unwrap();
    let b = predict(&ck.store, &restored, &scenes[0]).unwrap();
    assert_eq!(a, b);
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
}
