mod common;

use common::{max_rel_diff, randomize_params, random_tensor, rng};
use stflow::autodiff::{ParamStore, BN_EPS};
use stflow::nn::{block_forward, init_block, BlockConfig, BlockKind};
use stflow::oracle::{dense_block, from_dense, to_dense};
use stflow::sparse::{CoordSet, KernelShape, SparseTensor4D};
use stflow::tensor::Matrix;

use std::sync::Arc;

fn cfg(kind: BlockKind, in_ch: usize, x: usize, y: usize) -> BlockConfig {
    BlockConfig {
        kind,
        in_ch,
        set1_ch: x,
        set2_ch: y,
    }
}

#[test]
fn blocks_match_dense_wiring() {
    let mut r = rng(31);
    for kind in BlockKind::ALL {
        for (in_ch, x, y) in [(4, 6, 5), (5, 3, 5)] {
            let c = cfg(kind, in_ch, x, y);
            let mut store: ParamStore<f64> = init_block(&c, "blk", 7).unwrap();
            randomize_params(&mut store, &mut r, 1.0);
            let input = random_tensor(&mut r, [8, 8, 8, 5], 0.3, in_ch);
            for train in [true, false] {
                let sparse = block_forward(&store, &c, "blk", &input, train).unwrap();
                let dense = dense_block(&to_dense(&input).unwrap(), &c, &store, "blk", train).unwrap();
                let expected = from_dense(&dense).unwrap();
                let (a, e) = (sparse.sorted_rows(), expected.sorted_rows());
                assert_eq!(a.len(), e.len());
                for ((ca, fa), (ce, fe)) in a.iter().zip(&e) {
                    assert_eq!(ca, ce);
                    assert!(max_rel_diff(fa, fe) <= 1e-5, "{kind} train={train} at {ca:?}");
                }
            }
        }
    }
}

#[test]
fn zero_kernels_leave_the_projected_residual() {
    let mut r = rng(2);
    for kind in BlockKind::ALL {
        let c = cfg(kind, 3, 4, 5);
        let mut store: ParamStore<f64> = init_block(&c, "b", 1).unwrap();
        randomize_params(&mut store, &mut r, 1.0);
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for n in &names {
            let projection = n.starts_with("b.proj.");
            let identity_bn = n.ends_with(".gamma") || n.ends_with(".running_var");
            let m = store.value_mut(n).unwrap();
            if !projection {
                m.fill(if identity_bn { 1.0 } else { 0.0 });
            }
        }
        let x = random_tensor(&mut r, [5, 5, 4, 5], 0.4, 3);
        let y = block_forward(&store, &c, "b", &x, false).unwrap();
        let w = store.get("b.proj.weight").unwrap();
        let b = store.get("b.proj.bias").unwrap();
        for i in 0..x.len() {
            for o in 0..5 {
                let mut proj = b.get(0, o);
                for ci in 0..3 {
                    proj += x.features.get(i, ci) * w.get(ci, o);
                }
                // the zeroed branch contributes ReLU(BN(0)) = 0 with identity BN
                let expected = proj.max(0.0);
                assert!((y.features.get(i, o) - expected).abs() < 1e-12, "{kind}");
            }
        }
    }
}

/// One conv at an isolated site: only the center weights see anything.
fn center(store: &ParamStore<f64>, name: &str, shape: KernelShape, x: &[f64]) -> Vec<f64> {
    let w = store.get(&format!("{name}.weight")).unwrap();
    let b = store.get(&format!("{name}.bias")).unwrap();
    let cin = x.len();
    (0..w.cols())
        .map(|o| b.get(0, o) + (0..cin).map(|c| x[c] * w.get(shape.center() * cin + c, o)).sum::<f64>())
        .collect()
}

fn bn_relu(store: &ParamStore<f64>, name: &str, v: Vec<f64>) -> Vec<f64> {
    let p = |s: &str, c: usize| store.get(&format!("{name}.bn.{s}")).unwrap().get(0, c);
    v.iter()
        .enumerate()
        .map(|(c, &a)| (p("gamma", c) * (a - p("running_mean", c)) / (p("running_var", c) + BN_EPS).sqrt() + p("beta", c)).max(0.0))
        .collect()
}

fn plus(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[test]
fn isolated_site_closed_form() {
    let mut r = rng(17);
    let (sp, tm, pw, full) = (KernelShape::SPATIAL, KernelShape::TEMPORAL, KernelShape::POINTWISE, KernelShape::FULL);
    for kind in BlockKind::ALL {
        let c = cfg(kind, 3, 4, 2);
        let mut store: ParamStore<f64> = init_block(&c, "q", 3).unwrap();
        randomize_params(&mut store, &mut r, 1.0);
        let x = vec![0.7, -0.4, 1.1];
        let coords = CoordSet::new(vec![[2, 1, 3, 2]], [4, 4, 4, 5]).unwrap();
        let input = SparseTensor4D::new(Arc::new(coords), Matrix::from_vec(1, 3, x.clone()).unwrap()).unwrap();
        let got = block_forward(&store, &c, "q", &input, false).unwrap();
        let cbr = |name: &str, shape, v: &[f64]| bn_relu(&store, &format!("q.{name}"), center(&store, &format!("q.{name}"), shape, v));
        let branch = match kind {
            BlockKind::Conv4d => cbr("c2", full, &cbr("c1", full, &x)),
            BlockKind::StdbB => cbr("t2", tm, &cbr("s2", sp, &cbr("t1", tm, &cbr("s1", sp, &x)))),
            BlockKind::StdbP => {
                let h = cbr("set1.f", pw, &plus(&cbr("set1.s", sp, &x), &cbr("set1.t", tm, &x)));
                cbr("set2.f", pw, &plus(&cbr("set2.s", sp, &h), &cbr("set2.t", tm, &h)))
            }
            BlockKind::StdbD => {
                let a = cbr("a.t", tm, &cbr("a.s", sp, &x));
                let b = cbr("b.s", sp, &cbr("b.t", tm, &x));
                cbr("f", pw, &plus(&a, &b))
            }
        };
        let residual = center(&store, "q.proj", pw, &x);
        let expected: Vec<f64> = plus(&branch, &residual).iter().map(|v| v.max(0.0)).collect();
        assert!(max_rel_diff(got.features.row(0), &expected) < 1e-12, "{kind}");
    }
}

#[test]
fn blocks_preserve_coordinates_and_are_deterministic() {
    let mut r = rng(5);
    for kind in BlockKind::ALL {
        let c = cfg(kind, 4, 4, 4);
        let store: ParamStore<f64> = init_block(&c, "b", 9).unwrap();
        let x = random_tensor(&mut r, [6, 6, 4, 5], 0.3, 4);
        let a = block_forward(&store, &c, "b", &x, true).unwrap();
        let b = block_forward(&store, &c, "b", &x, true).unwrap();
        assert_eq!(a.coords, x.coords);
        assert_eq!(a.features.as_slice(), b.features.as_slice());
        assert!(!store.contains("b.proj.weight"));
    }
}

#[test]
fn channel_mismatch_is_reported() {
    let c = cfg(BlockKind::StdbB, 4, 4, 4);
    let store: ParamStore<f64> = init_block(&c, "b", 0).unwrap();
    let x = random_tensor(&mut rng(0), [4, 4, 4, 2], 0.5, 3);
    assert!(block_forward(&store, &c, "b", &x, false).is_err());
}
