use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Session, Var};
use crate::error::{Error, Result};
use crate::geom::{PointCloud, Scene};
use crate::sparse::SparseTensor4D;
use crate::tensor::{Matrix, Real};
use crate::voxelize::{encode_vfe, voxelize_frames, VoxelizedFrames, VOXEL_CHANNELS};

use super::blocks::{block, network};
use super::config::{BlockConfig, NetworkConfig};
use super::exec::{InitExec, TapeExec};
use super::head::{init_point_head, point_head};
use super::layers::init_vfe;
use super::plan::NetworkPlan;

/// Ground truth for the in-range points of sweep `t`.
#[derive(Clone, Debug)]
pub struct Targets {
    pub motion: Matrix<f32>,
    pub speed: Vec<f32>,
    pub class_id: Vec<u8>,
}

/// Parameter-independent preprocessing of one sample, reusable across steps.
#[derive(Debug)]
pub struct PreparedScene {
    pub frames: VoxelizedFrames,
    pub plan: NetworkPlan,
    /// Level-0 row of the voxel of each in-range point of sweep `t`.
    pub sites: Arc<Vec<u32>>,
    /// Encoder rows of those points.
    pub current_rows: Arc<Vec<u32>>,
    /// Sweep-`t` indices of the in-range points.
    pub in_range: Vec<u32>,
    pub num_points: usize,
    pub targets: Option<Targets>,
}

impl PreparedScene {
    pub fn num_in_range(&self) -> usize {
        self.in_range.len()
    }

    /// Expand per-in-range-point rows to all sweep-`t` points, zeros elsewhere.
    pub fn scatter_to_points(&self, pred: &Matrix<f32>) -> Vec<[f32; 3]> {
        let mut out = vec![[0.0; 3]; self.num_points];
        for (r, &p) in self.in_range.iter().enumerate() {
            let row = pred.row(r);
            out[p as usize] = [row[0], row[1], row[2]];
        }
        out
    }
}

/// Voxelize the newest `T` sweeps (ending at `t+1`) warped into the `t+1` frame.
pub fn prepare_clouds(clouds: &[PointCloud], cfg: &NetworkConfig) -> Result<PreparedScene> {
    let frames = voxelize_frames(clouds, &cfg.grid)?;
    let plan = NetworkPlan::new(frames.coords.clone(), cfg)?;
    let current_rows = Arc::new(frames.current_rows().map(|r| r as u32).collect());
    Ok(PreparedScene {
        sites: Arc::new(frames.current_sites()),
        current_rows,
        in_range: frames.current_map().in_range.clone(),
        num_points: clouds[frames.current_sweep()].len(),
        plan,
        frames,
        targets: None,
    })
}

pub fn prepare_scene(scene: &Scene, cfg: &NetworkConfig) -> Result<PreparedScene> {
    scene.validate()?;
    let t = cfg.grid.num_timesteps as usize;
    if scene.sweeps.len() < t {
        return Err(Error::Config(format!(
            "scene has {} sweeps, network needs {t}",
            scene.sweeps.len()
        )));
    }
    let mut prep = prepare_clouds(&scene.warped_sweeps(t), cfg)?;
    let idx = &prep.in_range;
    let mut motion = Matrix::zeros(idx.len(), 3);
    for (r, &p) in idx.iter().enumerate() {
        motion
            .row_mut(r)
            .copy_from_slice(&scene.gt_motion[p as usize]);
    }
    prep.targets = Some(Targets {
        motion,
        speed: idx.iter().map(|&p| scene.gt_speed[p as usize]).collect(),
        class_id: idx.iter().map(|&p| scene.class_id[p as usize]).collect(),
    });
    Ok(prep)
}

/// Fresh parameters: encoder, network and head, seeded.
pub fn init_params<T: Real>(cfg: &NetworkConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_vfe(&mut store, cfg.vfe_layers, &mut rng)?;
    let mut e = InitExec {
        store: &mut store,
        rng: &mut rng,
    };
    network(&mut e, cfg, &(0, VOXEL_CHANNELS))?;
    init_point_head(&mut store, &cfg.head, &mut rng)?;
    Ok(store)
}

/// Parameters of one block under `prefix`.
pub fn init_block<T: Real>(cfg: &BlockConfig, prefix: &str, seed: u64) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = InitExec {
        store: &mut store,
        rng: &mut rng,
    };
    block(&mut e, prefix, cfg, &(0, cfg.in_ch))?;
    Ok(store)
}

/// One block applied to a standalone tensor.
pub fn block_forward<T: Real>(
    store: &ParamStore<T>,
    cfg: &BlockConfig,
    prefix: &str,
    x: &SparseTensor4D<T>,
    train: bool,
) -> Result<SparseTensor4D<T>> {
    let plan = NetworkPlan::single(x.coords.clone());
    let mut s = Session::new(store, train);
    let v = s.input(x.features.clone());
    let mut e = TapeExec {
        session: &mut s,
        plan: &plan,
    };
    let y = block(&mut e, prefix, cfg, &(v, 0))?.0;
    SparseTensor4D::new(x.coords.clone(), s.value(y).clone())
}

/// The hourglass on an already-built plan; `x` holds level-0 features.
pub fn network_forward<T: Real>(
    s: &mut Session<T>,
    cfg: &NetworkConfig,
    plan: &NetworkPlan,
    x: Var,
) -> Result<Var> {
    let mut e = TapeExec { session: s, plan };
    Ok(network(&mut e, cfg, &(x, 0))?.0)
}

/// Run the network on a standalone tensor and return the output tensor.
pub fn run_network<T: Real>(
    store: &ParamStore<T>,
    cfg: &NetworkConfig,
    input: &SparseTensor4D<T>,
    train: bool,
) -> Result<SparseTensor4D<T>> {
    let plan = NetworkPlan::new(input.coords.clone(), cfg)?;
    let mut s = Session::new(store, train);
    let x = s.input(input.features.clone());
    let y = network_forward(&mut s, cfg, &plan, x)?;
    SparseTensor4D::new(input.coords.clone(), s.value(y).clone())
}

/// Encoder, network and head; returns motion for the in-range points of sweep `t`.
pub fn forward<T: Real>(
    s: &mut Session<T>,
    cfg: &NetworkConfig,
    prep: &PreparedScene,
) -> Result<Var> {
    let raw = s.input(prep.frames.raw.cast());
    let fp = encode_vfe(s, raw, cfg.vfe_layers)?;
    let fv = s.segment_mean(fp, prep.frames.members.clone())?;
    let out = network_forward(s, cfg, &prep.plan, fv)?;
    let fp_t = s.gather(fp, prep.current_rows.clone())?;
    point_head(s, out, prep.sites.clone(), fp_t)
}

/// Inference with running BatchNorm statistics.
pub fn predict(
    store: &ParamStore<f32>,
    cfg: &NetworkConfig,
    prep: &PreparedScene,
) -> Result<Matrix<f32>> {
    let mut s = Session::new(store, false);
    let y = forward(&mut s, cfg, prep)?;
    Ok(s.value(y).clone())
}
