//! Parameter initialization for the layer kinds used across the model.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ParamKind, ParamStore};
use crate::error::Result;
use crate::tensor::{Matrix, Real};

fn kaiming<T: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Matrix<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..rows * cols)
        .map(|_| T::lit(normal.sample(rng)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// `{prefix}.weight` (in x out, Kaiming normal) and `{prefix}.bias` (zeros).
pub fn init_linear<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cin: usize,
    cout: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(
        format!("{prefix}.weight"),
        kaiming(rng, cin, cout, cin),
        ParamKind::Param,
    )?;
    store.insert(
        format!("{prefix}.bias"),
        Matrix::zeros(1, cout),
        ParamKind::Param,
    )
}

/// Sparse conv weights laid out `(K·C_in) x C_out`, fan-in `K·C_in`.
pub fn init_conv<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    volume: usize,
    cin: usize,
    cout: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(
        format!("{prefix}.weight"),
        kaiming(rng, volume * cin, cout, volume * cin),
        ParamKind::Param,
    )?;
    store.insert(
        format!("{prefix}.bias"),
        Matrix::zeros(1, cout),
        ParamKind::Param,
    )
}

/// Identity BatchNorm: gamma 1, beta 0, running mean 0, running var 1.
pub fn init_batch_norm<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    channels: usize,
) -> Result<()> {
    store.insert(
        format!("{prefix}.gamma"),
        Matrix::filled(1, channels, T::one()),
        ParamKind::Param,
    )?;
    store.insert(
        format!("{prefix}.beta"),
        Matrix::zeros(1, channels),
        ParamKind::Param,
    )?;
    store.insert(
        format!("{prefix}.running_mean"),
        Matrix::zeros(1, channels),
        ParamKind::Buffer,
    )?;
    store.insert(
        format!("{prefix}.running_var"),
        Matrix::filled(1, channels, T::one()),
        ParamKind::Buffer,
    )
}

pub fn init_vfe<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    layers: usize,
    rng: &mut R,
) -> Result<()> {
    for i in 0..layers {
        let cin = if i == 0 {
            crate::voxelize::RAW_FEATURES
        } else {
            crate::voxelize::VOXEL_CHANNELS
        };
        init_linear(
            store,
            &format!("vfe.{i}.linear"),
            cin,
            crate::voxelize::VOXEL_CHANNELS,
            rng,
        )?;
        init_batch_norm(
            store,
            &format!("vfe.{i}.bn"),
            crate::voxelize::VOXEL_CHANNELS,
        )?;
    }
    Ok(())
}
