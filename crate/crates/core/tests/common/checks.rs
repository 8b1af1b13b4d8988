//! Checks shared by the regular tests and the acceptance run.

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use stflow::eval::{bucket_normalized_epe, dynamic_iou, three_way_epe, BucketConfig};
use stflow::nn::{BlockKind, NetworkConfig};
use stflow::oracle::{dense_conv4d, from_dense, to_dense};
use stflow::sparse::{build_kernel_map_subm, conv_subm, KernelShape};
use stflow::tensor::Matrix;

use super::{max_rel_diff, random_matrix, random_tensor, rng};

pub fn conv_params(rng: &mut impl Rng, k: KernelShape, cin: usize, cout: usize) -> (Matrix<f64>, Vec<f64>) {
    let w = random_matrix(rng, k.volume() * cin, cout, 0.5);
    let b = (0..cout).map(|_| rng.random_range(-0.5..0.5)).collect();
    (w, b)
}

/// Random submanifold convolutions against the dense reference; returns the worst relative error.
pub fn conv_matches_dense_oracle(instances_per_shape: usize) -> f64 {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for trial in 0..4 * instances_per_shape {
        let shape = KernelShape::ALL[trial % 4];
        let dims = [r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=5)];
        let occupancy = r.random_range(0.05..=1.0);
        let (cin, cout) = (r.random_range(1..=32), r.random_range(1..=32));
        let x = random_tensor(&mut r, dims, occupancy, cin);
        let (w, b) = conv_params(&mut r, shape, cin, cout);
        let map = build_kernel_map_subm(&x.coords, shape);
        let sparse = conv_subm(&x, &w, &b, &map).unwrap();
        let dense = dense_conv4d(&to_dense(&x).unwrap(), &w, &b, shape, true).unwrap();
        let expected = from_dense(&dense).unwrap();
        let (a, e) = (sparse.sorted_rows(), expected.sorted_rows());
        assert_eq!(a.len(), e.len(), "trial {trial}");
        for ((ca, fa), (ce, fe)) in a.iter().zip(&e) {
            assert_eq!(ca, ce);
            let d = max_rel_diff(fa, fe);
            assert!(d <= 1e-5, "trial {trial} shape {shape:?} at {ca:?}: {d:e}");
            worst = worst.max(d);
        }
    }
    worst
}

/// Output shape (w, l, h, t) and channels of every stage of the full-scale network.
pub const FULL_SCALE_STAGES: [([u32; 4], usize); 10] = [
    ([512, 512, 32, 5], 16),
    ([256, 256, 16, 5], 32),
    ([128, 128, 8, 5], 64),
    ([64, 64, 4, 5], 64),
    ([32, 32, 4, 5], 64),
    ([32, 32, 4, 5], 64),
    ([64, 64, 4, 5], 64),
    ([128, 128, 8, 5], 64),
    ([256, 256, 16, 5], 64),
    ([512, 512, 32, 5], 16),
];

pub fn full_scale_stage_shapes_are_exact() {
    for kind in BlockKind::ALL {
        let trace = NetworkConfig::full_scale(kind).shape_trace();
        assert_eq!(trace.len(), FULL_SCALE_STAGES.len());
        for (s, (dims, ch)) in trace.iter().zip(FULL_SCALE_STAGES) {
            assert_eq!((s.dims, s.channels), (dims, ch), "{kind} stage {}", s.stage);
        }
    }
}

#[derive(Clone, Debug)]
pub struct MetricCase {
    pub pred: Vec<[f32; 3]>,
    pub gt: Vec<[f32; 3]>,
    pub class_id: Vec<u8>,
    pub speed: Vec<f32>,
}

fn vec3() -> impl Strategy<Value = [f32; 3]> {
    prop::array::uniform3(-0.6f32..0.6)
}

/// Flows up to 6 m/s in every class, speeds consistent with the ground truth.
pub fn metric_case() -> impl Strategy<Value = MetricCase> {
    (1usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(vec3(), n),
            prop::collection::vec(vec3(), n),
            prop::collection::vec(0u8..5, n),
        )
            .prop_map(|(pred, gt, class_id)| {
                let speed = gt.iter().map(|g| (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt() / 0.1).collect();
                MetricCase { pred, gt, class_id, speed }
            })
    })
}

fn permute<T: Clone>(v: &[T], order: &[usize]) -> Vec<T> {
    order.iter().map(|&i| v[i].clone()).collect()
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-6 * x.abs().max(1.0),
        (None, None) => true,
        _ => false,
    }
}

pub fn perfect_predictions_score_zero(c: &MetricCase) -> Result<(), TestCaseError> {
    let tw = three_way_epe(&c.gt, &c.gt, &c.class_id, &c.speed);
    prop_assert_eq!(tw.avg, Some(0.0));
    for v in [tw.fd, tw.bs, tw.fs].into_iter().flatten() {
        prop_assert_eq!(v, 0.0);
    }
    let b = bucket_normalized_epe(&c.gt, &c.gt, &c.class_id, &c.speed, &BucketConfig::default());
    for v in b.per_class.values().flatten() {
        prop_assert_eq!(*v, 0.0);
    }
    prop_assert!(b.mean_dynamic.is_none_or(|v| v == 0.0));
    prop_assert!(b.mean_static.is_none_or(|v| v == 0.0));
    prop_assert_eq!(dynamic_iou(&c.gt, &c.gt, 0.1), 1.0);
    Ok(())
}

pub fn metrics_ignore_point_order(c: &MetricCase, seed: u64) -> Result<(), TestCaseError> {
    let mut order: Vec<usize> = (0..c.pred.len()).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let p = MetricCase {
        pred: permute(&c.pred, &order),
        gt: permute(&c.gt, &order),
        class_id: permute(&c.class_id, &order),
        speed: permute(&c.speed, &order),
    };
    let a = three_way_epe(&c.pred, &c.gt, &c.class_id, &c.speed);
    let b = three_way_epe(&p.pred, &p.gt, &p.class_id, &p.speed);
    prop_assert!(close(a.fd, b.fd) && close(a.bs, b.bs) && close(a.fs, b.fs) && close(a.avg, b.avg));
    prop_assert_eq!(a.counts, b.counts);
    let cfg = BucketConfig::default();
    let x = bucket_normalized_epe(&c.pred, &c.gt, &c.class_id, &c.speed, &cfg);
    let y = bucket_normalized_epe(&p.pred, &p.gt, &p.class_id, &p.speed, &cfg);
    prop_assert!(close(x.mean_dynamic, y.mean_dynamic) && close(x.mean_static, y.mean_static));
    for (k, v) in &x.per_class {
        prop_assert!(close(*v, y.per_class[k]));
    }
    prop_assert_eq!(dynamic_iou(&c.pred, &c.gt, 0.1), dynamic_iou(&p.pred, &p.gt, 0.1));
    Ok(())
}
