mod common;

use common::grad_checks;
use common::{random_matrix, random_tensor, randomize_params, rng};
use stflow::autodiff::{ParamStore, Session};
use stflow::geom::{generate_scene, SceneSpec};
use stflow::nn::{block, init_block, init_params, BlockConfig, BlockKind, NetworkConfig, NetworkPlan, TapeExec};
use stflow::train::{flow_loss, LossConfig};

#[test]
fn elementwise_and_matrix_ops() {
    grad_checks::elementwise_and_matrix_ops();
}

#[test]
fn gather_segment_mean_and_distance() {
    grad_checks::gather_segment_mean_and_distance();
}

#[test]
fn batch_norm_in_both_modes() {
    grad_checks::batch_norm_in_both_modes();
}

#[test]
fn vfe_head_and_loss() {
    grad_checks::vfe_head_and_loss();
}

#[test]
fn every_block_kind() {
    grad_checks::every_block_kind();
}

#[test]
fn whole_network_at_16x16x4x5() {
    grad_checks::whole_network_at_16x16x4x5();
}

#[test]
fn adjoints_are_linear_in_the_loss() {
    let mut r = rng(60);
    let c = BlockConfig {
        kind: BlockKind::StdbD,
        in_ch: 3,
        set1_ch: 3,
        set2_ch: 3,
    };
    let mut st: ParamStore<f64> = init_block(&c, "b", 0).unwrap();
    randomize_params(&mut st, &mut r, 1.0);
    let x = random_tensor(&mut r, [5, 5, 5, 5], 0.3, 3);
    let plan = NetworkPlan::single(x.coords.clone());
    let (p1, p2) = (random_matrix(&mut r, x.len(), 3, 1.0), random_matrix(&mut r, x.len(), 3, 1.0));
    let grads = |which: u8| {
        let mut s = Session::new(&st, true);
        let xv = s.input(x.features.clone());
        let mut e = TapeExec { session: &mut s, plan: &plan };
        let y = block(&mut e, "b", &c, &(xv, 0)).unwrap().0;
        let l1 = s.tape.weighted_sum(y, p1.clone()).unwrap();
        let l2 = s.tape.weighted_sum(y, p2.clone()).unwrap();
        let loss = match which {
            1 => l1,
            2 => l2,
            _ => s.tape.add(l1, l2).unwrap(),
        };
        s.finish(loss).unwrap().grads
    };
    let (g1, g2, g12) = (grads(1), grads(2), grads(0));
    for ((n, a), ((_, b), (_, ab))) in g1.iter().zip(g2.iter().zip(g12.iter())) {
        for ((x, y), z) in a.as_slice().iter().zip(b.as_slice()).zip(ab.as_slice()) {
            assert!((x + y - z).abs() <= 1e-6 * z.abs().max(1.0), "{n}");
        }
    }
}

#[test]
fn scene_pipeline_gradient_reaches_every_parameter_kind() {
    // smoke: a real scene through the whole model yields finite, non-trivial grads
    let cfg = NetworkConfig::desk(BlockKind::StdbB);
    let scene = generate_scene(3, &SceneSpec::desk()).unwrap();
    let prep = stflow::nn::prepare_scene(&scene, &cfg).unwrap();
    let st: ParamStore<f64> = init_params(&cfg, 0).unwrap();
    let mut s = Session::new(&st, true);
    let pred = stflow::nn::forward(&mut s, &cfg, &prep).unwrap();
    let t = prep.targets.as_ref().unwrap();
    let loss = flow_loss(&mut s, pred, &t.motion, &t.speed, &LossConfig::default()).unwrap();
    let out = s.finish(loss).unwrap();
    assert!(out.grads.iter().all(|(_, g)| g.all_finite()));
    let head = &out.grads.iter().find(|(n, _)| n == "head.fc2.weight").unwrap().1;
    assert!(head.as_slice().iter().any(|&v| v != 0.0));
}
