use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{ParamKind, ParamStore, Session, Var};
use crate::error::{Error, Result};
use crate::sparse::NONE;
use crate::tensor::{Matrix, Real};

use super::config::PointHeadConfig;
use super::layers::init_linear;

pub fn init_point_head<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    cfg: &PointHeadConfig,
    rng: &mut R,
) -> Result<()> {
    init_linear(
        store,
        "head.fc1",
        cfg.voxel_ch + cfg.point_ch,
        cfg.hidden,
        rng,
    )?;
    // zero output layer: training starts from "no motion" rather than a random field
    store.insert(
        "head.fc2.weight",
        Matrix::zeros(cfg.hidden, cfg.out),
        ParamKind::Param,
    )?;
    store.insert("head.fc2.bias", Matrix::zeros(1, cfg.out), ParamKind::Param)
}

/// Per point: its voxel's feature (row `voxel_row[i]` of `voxel_features`)
/// next to its own encoder feature, then linear → ReLU → linear.
pub fn point_head<T: Real>(
    s: &mut Session<T>,
    voxel_features: Var,
    voxel_row: Arc<Vec<u32>>,
    point_features: Var,
) -> Result<Var> {
    if voxel_row.contains(&NONE) {
        return Err(Error::shape("point_head", "point without an active voxel"));
    }
    if voxel_row.len() != s.value(point_features).rows() {
        return Err(Error::shape(
            "point_head",
            format!(
                "{} voxel rows for {} points",
                voxel_row.len(),
                s.value(point_features).rows()
            ),
        ));
    }
    let v = s.gather(voxel_features, voxel_row)?;
    let h = s.concat_cols(v, point_features)?;
    let h = s.linear(h, "head.fc1")?;
    let h = s.relu(h);
    s.linear(h, "head.fc2")
}
