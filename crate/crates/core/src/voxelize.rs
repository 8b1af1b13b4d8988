//! Voxel grid assignment, the point feature encoder and temporal stacking.
//!
//! Each warped sweep is bucketed into a 3D grid. Every in-range point gets a
//! 9-vector (absolute position, offset from its voxel's center, offset from
//! the mean of the points sharing its voxel), which a small shared encoder
//! lifts to 16 channels. Voxel features are the mean over member points, and
//! the sweeps are stacked along the time axis of one 4D sparse tensor.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Session, Var};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::sparse::{CoordSet, Segments, SparseTensor4D, MAX_DIMS, NONE};
use crate::tensor::{Matrix, Real};

pub const RAW_FEATURES: usize = 9;
pub const VOXEL_CHANNELS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub origin: [f32; 3],
    pub voxel_size: [f32; 3],
    /// `(W, L, H)`.
    pub dims: [u32; 3],
    pub num_timesteps: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl GridConfig {
    /// 102.4 m x 102.4 m x 6.4 m at 0.2 m voxels, five sweeps.
    pub fn full_scale() -> Self {
        Self {
            origin: [-51.2, -51.2, -3.2],
            voxel_size: [0.2; 3],
            dims: [512, 512, 32],
            num_timesteps: 5,
        }
    }

    /// 12.8 m x 12.8 m x 1.6 m at 0.2 m voxels.
    pub fn desk() -> Self {
        Self {
            origin: [-6.4, -6.4, -0.8],
            voxel_size: [0.2; 3],
            dims: [64, 64, 8],
            num_timesteps: 5,
        }
    }

    pub fn with_timesteps(mut self, t: u32) -> Self {
        self.num_timesteps = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.voxel_size.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!(
                "voxel size must be positive, got {:?}",
                self.voxel_size
            )));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        let d = self.dims4();
        if d.iter().zip(MAX_DIMS).any(|(&v, m)| v == 0 || v > m) {
            return Err(Error::Config(format!(
                "grid dims {d:?} outside 1..={MAX_DIMS:?}"
            )));
        }
        if self.num_timesteps < 2 {
            return Err(Error::Config(
                "need at least two timesteps (t and t+1)".into(),
            ));
        }
        Ok(())
    }

    pub fn dims4(&self) -> [u32; 4] {
        [self.dims[0], self.dims[1], self.dims[2], self.num_timesteps]
    }

    /// Time index of sweep `t` when the stack ends with sweep `t+1`.
    pub fn current_time_index(&self) -> u32 {
        self.num_timesteps - 2
    }

    /// Covered extent in meters per axis.
    pub fn coverage(&self) -> [f32; 3] {
        [0, 1, 2].map(|a| self.dims[a] as f32 * self.voxel_size[a])
    }

    pub fn voxel_of(&self, p: [f32; 3]) -> Option<[u32; 3]> {
        let mut c = [0u32; 3];
        for a in 0..3 {
            let f = ((p[a] as f64 - self.origin[a] as f64) / self.voxel_size[a] as f64).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            c[a] = f as u32;
        }
        Some(c)
    }

    pub fn voxel_center(&self, c: [u32; 3]) -> [f32; 3] {
        [0, 1, 2].map(|a| {
            (self.origin[a] as f64 + (c[a] as f64 + 0.5) * self.voxel_size[a] as f64) as f32
        })
    }
}

/// Point → voxel assignment for one sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct PointVoxelMap {
    /// Per input point: row in `active`, or [`NONE`] when out of range.
    pub voxel_of_point: Vec<u32>,
    /// Input indices of in-range points; feature rows follow this order.
    pub in_range: Vec<u32>,
    /// Active `(w, l, h)` voxels sorted by `(h, l, w)`.
    pub active: Vec<[u32; 3]>,
    /// In-range rows grouped by active voxel.
    pub members: Arc<Segments>,
}

impl PointVoxelMap {
    pub fn num_points(&self) -> usize {
        self.voxel_of_point.len()
    }

    pub fn num_in_range(&self) -> usize {
        self.in_range.len()
    }

    /// Active voxel of each in-range row.
    pub fn voxel_of_row(&self) -> Vec<u32> {
        self.in_range
            .iter()
            .map(|&p| self.voxel_of_point[p as usize])
            .collect()
    }
}

pub fn assign_voxels(cloud: &PointCloud, grid: &GridConfig) -> PointVoxelMap {
    let cells: Vec<Option<[u32; 3]>> = cloud.points.iter().map(|&p| grid.voxel_of(p)).collect();
    let key = |c: &[u32; 3]| (c[2], c[1], c[0]);
    let mut active: Vec<[u32; 3]> = cells.iter().flatten().copied().collect();
    active.sort_unstable_by_key(key);
    active.dedup();
    let mut voxel_of_point = vec![NONE; cells.len()];
    let mut in_range = Vec::new();
    for (i, c) in cells.iter().enumerate() {
        if let Some(c) = c {
            let row = active
                .binary_search_by_key(&key(c), key)
                .expect("active voxel");
            voxel_of_point[i] = row as u32;
            in_range.push(i as u32);
        }
    }
    let of_row: Vec<u32> = in_range
        .iter()
        .map(|&p| voxel_of_point[p as usize])
        .collect();
    let members = Arc::new(Segments::from_assignment(&of_row, active.len()));
    PointVoxelMap {
        voxel_of_point,
        in_range,
        active,
        members,
    }
}

/// `(x, y, z, x−x_v, y−y_v, z−z_v, x−x_c, y−y_c, z−z_c)` per in-range point,
/// with `_v` the voxel center and `_c` the mean of the voxel's points.
pub fn build_point_features(
    cloud: &PointCloud,
    map: &PointVoxelMap,
    grid: &GridConfig,
) -> Matrix<f32> {
    let mut centroid = vec![[0f64; 3]; map.active.len()];
    for (v, c) in centroid.iter_mut().enumerate() {
        let members = map.members.members(v);
        for &row in members {
            let p = cloud.points[map.in_range[row as usize] as usize];
            for a in 0..3 {
                c[a] += p[a] as f64;
            }
        }
        let n = members.len().max(1) as f64;
        c.iter_mut().for_each(|x| *x /= n);
    }
    let mut out = Matrix::zeros(map.in_range.len(), RAW_FEATURES);
    for (row, &p) in map.in_range.iter().enumerate() {
        let v = map.voxel_of_point[p as usize] as usize;
        let p = cloud.points[p as usize];
        let center = grid.voxel_center(map.active[v]);
        let r = out.row_mut(row);
        for a in 0..3 {
            r[a] = p[a];
            r[3 + a] = p[a] - center[a];
            r[6 + a] = (p[a] as f64 - centroid[v][a]) as f32;
        }
    }
    out
}

/// `vfe_layers` rounds of linear → BatchNorm → ReLU, the first 9→16, the rest 16→16.
pub fn encode_vfe<T: Real>(s: &mut Session<T>, raw: Var, vfe_layers: usize) -> Result<Var> {
    if s.value(raw).cols() != RAW_FEATURES {
        return Err(Error::shape(
            "encode_vfe",
            format!(
                "expected {RAW_FEATURES} raw features, got {}",
                s.value(raw).cols()
            ),
        ));
    }
    let mut x = raw;
    for i in 0..vfe_layers {
        x = s.linear(x, &format!("vfe.{i}.linear"))?;
        x = s.batch_norm(x, &format!("vfe.{i}.bn"))?;
        x = s.relu(x);
    }
    Ok(x)
}

/// Mean of point features per active voxel.
pub fn pool_to_voxels<T: Real>(
    s: &mut Session<T>,
    point_features: Var,
    map: &PointVoxelMap,
) -> Result<Var> {
    s.segment_mean(point_features, map.members.clone())
}

/// Voxel features of one sweep on a given grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelFeatures<T> {
    pub coords: Vec<[u32; 3]>,
    pub features: Matrix<T>,
    pub grid: GridConfig,
}

/// Stack per-sweep voxel features; list position is the time index.
pub fn fuse_temporal<T: Real>(per_sweep: &[VoxelFeatures<T>]) -> Result<SparseTensor4D<T>> {
    let grid = per_sweep
        .first()
        .map(|v| v.grid.clone())
        .ok_or_else(|| Error::Config("no sweeps to fuse".into()))?;
    if per_sweep.iter().any(|v| v.grid != grid) {
        return Err(Error::GridMismatch);
    }
    if per_sweep.len() != grid.num_timesteps as usize {
        return Err(Error::Config(format!(
            "{} sweeps for a grid with {} timesteps",
            per_sweep.len(),
            grid.num_timesteps
        )));
    }
    let channels = per_sweep[0].features.cols();
    let mut rows: Vec<([u32; 4], &[T])> = Vec::new();
    for (t, v) in per_sweep.iter().enumerate() {
        if v.features.rows() != v.coords.len() || v.features.cols() != channels {
            return Err(Error::shape(
                "fuse_temporal",
                format!(
                    "sweep {t}: {} coords, features {:?}",
                    v.coords.len(),
                    v.features.shape()
                ),
            ));
        }
        rows.extend(
            v.coords
                .iter()
                .enumerate()
                .map(|(r, c)| ([c[0], c[1], c[2], t as u32], v.features.row(r))),
        );
    }
    rows.sort_by_key(|(c, _)| (c[3], c[2], c[1], c[0]));
    let mut data = Vec::with_capacity(rows.len() * channels);
    for (_, f) in &rows {
        data.extend_from_slice(f);
    }
    let features = Matrix::from_vec(rows.len(), channels, data)?;
    let coords = CoordSet::new(rows.into_iter().map(|(c, _)| c).collect(), grid.dims4())?;
    SparseTensor4D::new(Arc::new(coords), features)
}

/// Everything about a stack of sweeps that does not depend on parameters.
#[derive(Clone, Debug)]
pub struct VoxelizedFrames {
    pub grid: GridConfig,
    pub maps: Vec<PointVoxelMap>,
    /// Raw features of all sweeps' in-range points, stacked in sweep order.
    pub raw: Matrix<f32>,
    /// First raw row of each sweep, plus the total.
    pub row_offsets: Vec<usize>,
    /// Active 4D sites in canonical order.
    pub coords: Arc<CoordSet>,
    /// Raw rows grouped by 4D site.
    pub members: Arc<Segments>,
}

impl VoxelizedFrames {
    pub fn current_sweep(&self) -> usize {
        self.grid.current_time_index() as usize
    }

    pub fn current_map(&self) -> &PointVoxelMap {
        &self.maps[self.current_sweep()]
    }

    /// Raw rows belonging to sweep `t`.
    pub fn current_rows(&self) -> std::ops::Range<usize> {
        let t = self.current_sweep();
        self.row_offsets[t]..self.row_offsets[t + 1]
    }

    /// 4D site of each in-range point of sweep `t`.
    pub fn current_sites(&self) -> Vec<u32> {
        let t = self.grid.current_time_index();
        self.current_map()
            .voxel_of_row()
            .iter()
            .map(|&v| {
                let c = self.current_map().active[v as usize];
                self.coords
                    .find([c[0], c[1], c[2], t])
                    .expect("site of sweep t") as u32
            })
            .collect()
    }
}

/// Voxelize `clouds` (oldest first, one per timestep) on `grid`.
pub fn voxelize_frames(clouds: &[PointCloud], grid: &GridConfig) -> Result<VoxelizedFrames> {
    grid.validate()?;
    if clouds.len() != grid.num_timesteps as usize {
        return Err(Error::Config(format!(
            "{} sweeps for a grid with {} timesteps",
            clouds.len(),
            grid.num_timesteps
        )));
    }
    let mut maps = Vec::with_capacity(clouds.len());
    let mut raw_data = Vec::new();
    let mut row_offsets = vec![0];
    let mut coords = Vec::new();
    let mut site_of_row = Vec::new();
    for (t, cloud) in clouds.iter().enumerate() {
        let map = assign_voxels(cloud, grid);
        raw_data.extend_from_slice(build_point_features(cloud, &map, grid).as_slice());
        // sweeps are appended in t order and each is sorted by (h, l, w),
        // so the stacked sites are already canonical
        let base = coords.len() as u32;
        site_of_row.extend(map.voxel_of_row().iter().map(|&v| base + v));
        coords.extend(map.active.iter().map(|c| [c[0], c[1], c[2], t as u32]));
        row_offsets.push(row_offsets.last().unwrap() + map.num_in_range());
        maps.push(map);
    }
    let rows = *row_offsets.last().unwrap();
    let members = Arc::new(Segments::from_assignment(&site_of_row, coords.len()));
    Ok(VoxelizedFrames {
        grid: grid.clone(),
        maps,
        raw: Matrix::from_vec(rows, RAW_FEATURES, raw_data)?,
        row_offsets,
        coords: Arc::new(CoordSet::new(coords, grid.dims4())?),
        members,
    })
}
