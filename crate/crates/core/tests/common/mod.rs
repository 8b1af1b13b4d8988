#![allow(dead_code)]

pub mod checks;
pub mod grad_checks;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stflow::sparse::{CoordSet, SparseTensor4D};
use stflow::tensor::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every site of `dims` kept with probability `occupancy`, in shuffled row order.
pub fn random_coords(rng: &mut impl Rng, dims: [u32; 4], occupancy: f64) -> CoordSet {
    let mut coords = Vec::new();
    for w in 0..dims[0] {
        for l in 0..dims[1] {
            for h in 0..dims[2] {
                for t in 0..dims[3] {
                    if rng.random::<f64>() < occupancy {
                        coords.push([w, l, h, t]);
                    }
                }
            }
        }
    }
    coords.shuffle(rng);
    CoordSet::new(coords, dims).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_tensor(rng: &mut impl Rng, dims: [u32; 4], occupancy: f64, channels: usize) -> SparseTensor4D<f64> {
    let coords = random_coords(rng, dims, occupancy);
    let features = random_matrix(rng, coords.len(), channels, 1.0);
    SparseTensor4D::new(Arc::new(coords), features).unwrap()
}

/// Largest `|a − b| / max(1, |a|, |b|)` over paired entries.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Replaces zero biases and identity BatchNorm settings with random values so
/// every parameter matters; weights are rescaled by `weight_scale`.
pub fn randomize_params(store: &mut stflow::autodiff::ParamStore<f64>, rng: &mut impl Rng, weight_scale: f64) {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let m = store.value_mut(&name).unwrap();
        let (lo, hi) = if name.ends_with(".gamma") || name.ends_with(".running_var") {
            (0.5, 1.5)
        } else if name.ends_with(".running_mean") {
            (-0.3, 0.3)
        } else if name.ends_with(".weight") {
            for v in m.as_mut_slice() {
                *v *= weight_scale;
            }
            continue;
        } else {
            (-0.3, 0.3)
        };
        for v in m.as_mut_slice() {
            *v = rng.random_range(lo..hi);
        }
    }
}
