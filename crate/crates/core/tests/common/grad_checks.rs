//! Finite-difference checks shared by the gradient tests and the acceptance run.

use std::sync::Arc;

use super::{random_matrix, random_tensor, randomize_params, rng};
use stflow::autodiff::{grad_check, GradCheckConfig, GradCheckReport, ParamKind, ParamStore, Session, Var};
use stflow::error::Result;
use stflow::nn::{
    block, init_block, init_params, network_forward, point_head, BlockConfig, BlockKind, NetworkConfig, NetworkPlan,
    TapeExec,
};
use stflow::sparse::Segments;
use stflow::tensor::Matrix;
use stflow::train::{flow_loss, LossConfig};
use stflow::voxelize::{encode_vfe, GridConfig};

const TOL: f64 = 1e-4;

/// Moves entries within 1e-2 of zero away from it, so ReLU kinks stay out of reach of the probe step.
fn off_kink(mut m: Matrix<f64>) -> Matrix<f64> {
    for v in m.as_mut_slice() {
        if v.abs() < 1e-2 {
            *v = if *v < 0.0 { -1e-2 } else { 1e-2 } + *v;
        }
    }
    m
}

fn store(entries: Vec<(&str, Matrix<f64>)>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (n, m) in entries {
        s.insert(n, m, ParamKind::Param).unwrap();
    }
    s
}

fn check<F>(label: &str, st: &mut ParamStore<f64>, seed: u64, tol: f64, f: F)
where
    F: Fn(&mut Session<f64>) -> Result<Var>,
{
    let cfg = GradCheckConfig {
        seed,
        samples_per_tensor: 30,
        ..Default::default()
    };
    let report = grad_check(st, &cfg, f).unwrap();
    assert!(report.passes(tol), "{label} seed {seed}: {report:?}");
}

pub fn elementwise_and_matrix_ops() {
    for seed in 0..3 {
        let mut r = rng(seed);
        let probe = random_matrix(&mut r, 5, 4, 1.0);
        let probe_rows = random_matrix(&mut r, 10, 4, 1.0);
        let probe_cols = random_matrix(&mut r, 5, 7, 1.0);
        let mut st = store(vec![
            ("a", random_matrix(&mut r, 5, 3, 1.0)),
            ("w", random_matrix(&mut r, 3, 4, 1.0)),
            ("b", random_matrix(&mut r, 1, 4, 1.0)),
            ("c", off_kink(random_matrix(&mut r, 5, 4, 1.0))),
            ("d", random_matrix(&mut r, 5, 3, 1.0)),
        ]);
        check("matmul+bias", &mut st, seed, TOL, |s| {
            let (a, w, b) = (s.param("a")?, s.param("w")?, s.param("b")?);
            let y = s.tape.matmul(a, w)?;
            let y = s.tape.add_bias(y, b)?;
            s.tape.weighted_sum(y, probe.clone())
        });
        check("add/mul/scale", &mut st, seed, TOL, |s| {
            let (a, d) = (s.param("a")?, s.param("d")?);
            let y = s.tape.mul(a, d)?;
            let z = s.tape.scale(a, -1.5);
            let y = s.tape.add(y, z)?;
            let ones = Matrix::filled(5, 3, 1.0);
            s.tape.weighted_sum(y, ones)
        });
        check("relu", &mut st, seed, TOL, |s| {
            let c = s.param("c")?;
            let y = s.tape.relu(c);
            s.tape.weighted_sum(y, probe.clone())
        });
        check("concat", &mut st, seed, TOL, |s| {
            let (a, c, d) = (s.param("a")?, s.param("c")?, s.param("d")?);
            let cols = s.tape.concat_cols(a, c)?;
            let cols = s.tape.weighted_sum(cols, probe_cols.clone())?;
            let w = s.param("w")?;
            let ad = s.tape.matmul(d, w)?;
            let rows = s.tape.concat_rows(&[c, ad])?;
            let rows = s.tape.weighted_sum(rows, probe_rows.clone())?;
            s.tape.add(cols, rows)
        });
        check("sum", &mut st, seed, TOL, |s| {
            let (a, d) = (s.param("a")?, s.param("d")?);
            let y = s.tape.mul(a, d)?;
            Ok(s.tape.sum(y))
        });
    }
}

pub fn gather_segment_mean_and_distance() {
    for seed in 0..3 {
        let mut r = rng(10 + seed);
        let index = Arc::new(vec![2, 0, 0, 4, 1, 3, 3, 3]);
        let seg = Arc::new(Segments::from_assignment(&[1, 0, 1, 2, 2, 2], 4));
        let probe_g = random_matrix(&mut r, 8, 3, 1.0);
        let probe_s = random_matrix(&mut r, 4, 3, 1.0);
        let target = random_matrix(&mut r, 6, 3, 1.0);
        let coef: Vec<f64> = (0..6).map(|i| 0.1 + 0.2 * i as f64).collect();
        let mut st = store(vec![("x", random_matrix(&mut r, 5, 3, 1.0)), ("p", random_matrix(&mut r, 6, 3, 1.0))]);
        check("gather", &mut st, seed, TOL, |s| {
            let x = s.param("x")?;
            let y = s.gather(x, index.clone())?;
            s.tape.weighted_sum(y, probe_g.clone())
        });
        check("segment_mean", &mut st, seed, TOL, |s| {
            let p = s.param("p")?;
            let y = s.segment_mean(p, seg.clone())?;
            s.tape.weighted_sum(y, probe_s.clone())
        });
        check("weighted_distance", &mut st, seed, TOL, |s| {
            let p = s.param("p")?;
            s.tape.weighted_distance(p, target.clone(), coef.clone())
        });
    }
}

pub fn batch_norm_in_both_modes() {
    for seed in 0..3 {
        let mut r = rng(20 + seed);
        let probe = random_matrix(&mut r, 9, 4, 1.0);
        let mut st = store(vec![
            ("x", random_matrix(&mut r, 9, 4, 2.0)),
            ("bn.gamma", random_matrix(&mut r, 1, 4, 1.0)),
            ("bn.beta", random_matrix(&mut r, 1, 4, 1.0)),
        ]);
        st.insert("bn.running_mean", random_matrix(&mut r, 1, 4, 0.5), ParamKind::Buffer).unwrap();
        st.insert("bn.running_var", Matrix::filled(1, 4, 0.8), ParamKind::Buffer).unwrap();
        check("batch_norm train", &mut st, seed, TOL, |s| {
            let x = s.param("x")?;
            let y = s.batch_norm(x, "bn")?;
            s.tape.weighted_sum(y, probe.clone())
        });
        check("batch_norm eval", &mut st, seed, TOL, |s| {
            let x = s.param("x")?;
            let running = (s.store().get("bn.running_mean")?.clone(), s.store().get("bn.running_var")?.clone());
            let (g, b) = (s.param("bn.gamma")?, s.param("bn.beta")?);
            let y = s.tape.batch_norm(x, g, b, 1e-5, Some((&running.0, &running.1)))?.0;
            s.tape.weighted_sum(y, probe.clone())
        });
    }
}

pub fn vfe_head_and_loss() {
    for seed in 0..3 {
        let mut r = rng(30 + seed);
        let mut st: ParamStore<f64> = init_params(&NetworkConfig::desk(BlockKind::StdbB), seed).unwrap();
        let keep = |n: &str| n.starts_with("vfe.") || n.starts_with("head.");
        let names: Vec<String> = st.names().filter(|n| !keep(n)).map(str::to_string).collect();
        let mut small = ParamStore::new();
        for (n, m, k) in st.iter() {
            if !names.iter().any(|x| x == n) {
                small.insert(n, m.clone(), k).unwrap();
            }
        }
        st = small;
        randomize_params(&mut st, &mut r, 1.0);
        let raw = random_matrix(&mut r, 12, 9, 1.0);
        st.insert("raw", raw, ParamKind::Param).unwrap();
        st.insert("voxels", random_matrix(&mut r, 4, 16, 1.0), ParamKind::Param).unwrap();
        let probe = random_matrix(&mut r, 12, 16, 1.0);
        check("encode_vfe", &mut st, seed, TOL, |s| {
            let raw = s.param("raw")?;
            let y = encode_vfe(s, raw, 1)?;
            s.tape.weighted_sum(y, probe.clone())
        });
        let rows = Arc::new(vec![0, 1, 1, 2, 3, 3, 0, 2, 2, 1, 0, 3]);
        let gt = random_matrix(&mut r, 12, 3, 0.3).cast::<f32>();
        let speed: Vec<f32> = (0..12).map(|i| [0.0, 0.3, 2.0][i % 3]).collect();
        let loss_cfg = LossConfig::default();
        check("point head + loss", &mut st, seed, TOL, |s| {
            let raw = s.param("raw")?;
            let fp = encode_vfe(s, raw, 1)?;
            let vox = s.param("voxels")?;
            let pred = point_head(s, vox, rows.clone(), fp)?;
            flow_loss(s, pred, &gt, &speed, &loss_cfg)
        });
    }
}

pub fn every_block_kind() {
    for kind in BlockKind::ALL {
        for seed in 0..3 {
            let mut r = rng(40 + seed);
            let c = BlockConfig {
                kind,
                in_ch: 3,
                set1_ch: 4,
                set2_ch: 5,
            };
            let mut st: ParamStore<f64> = init_block(&c, "b", seed).unwrap();
            randomize_params(&mut st, &mut r, 1.0);
            let x = random_tensor(&mut r, [6, 6, 6, 5], 0.25, 3);
            st.insert("x", x.features.clone(), ParamKind::Param).unwrap();
            let plan = NetworkPlan::single(x.coords.clone());
            // unit-scale loss keeps finite-difference roundoff small
            let probe = random_matrix(&mut r, x.len(), 5, 1.0 / (x.len() as f64).sqrt());
            check(kind.name(), &mut st, seed, TOL, |s| {
                let xv = s.param("x")?;
                let mut e = TapeExec { session: s, plan: &plan };
                let y = block(&mut e, "b", &c, &(xv, 0))?.0;
                s.tape.weighted_sum(y, probe.clone())
            });
        }
    }
}

pub fn whole_network_at_16x16x4x5() -> GradCheckReport {
    let grid = GridConfig {
        dims: [16, 16, 4],
        ..GridConfig::desk()
    };
    let cfg = NetworkConfig::desk(BlockKind::StdbP).with_grid(grid);
    let mut r = rng(50);
    let mut st: ParamStore<f64> = init_params(&cfg, 1).unwrap();
    randomize_params(&mut st, &mut r, 1.0);
    let x = random_tensor(&mut r, [16, 16, 4, 5], 0.15, 16);
    st.insert("x", x.features.clone(), ParamKind::Param).unwrap();
    let plan = NetworkPlan::new(x.coords.clone(), &cfg).unwrap();
    let probe = random_matrix(&mut r, x.len(), 16, 1.0 / (x.len() as f64).sqrt());
    // biases feeding batch-statistics BatchNorm have an exactly zero
    // gradient; below 1e-5 the comparison is absolute
    let gc = GradCheckConfig {
        seed: 3,
        samples_per_tensor: 2,
        abs_floor: 1e-5,
        ..Default::default()
    };
    let report = grad_check(&mut st, &gc, |s| {
        let xv = s.param("x")?;
        let y = network_forward(s, &cfg, &plan, xv)?;
        s.tape.weighted_sum(y, probe.clone())
    })
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
    assert!(report.checked >= 250, "too few probes away from kinks: {report:?}");
    report
}

