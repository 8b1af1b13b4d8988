//! Residual blocks, the hourglass network and the point head.

mod blocks;
mod config;
mod exec;
mod head;
pub mod layers;
mod model;
mod plan;

pub use blocks::{block, network};
pub use config::{
    BlockConfig, BlockKind, NetworkConfig, PointHeadConfig, Resample, SkipFusion, StageConfig,
    StageShape, CONFIG_SCHEMA_VERSION,
};
pub use exec::{Exec, InitExec, Shape, TapeExec};
pub use head::{init_point_head, point_head};
pub use model::{
    block_forward, forward, init_block, init_params, network_forward, predict, prepare_clouds,
    prepare_scene, run_network, PreparedScene, Targets,
};
pub use plan::{Level, NetworkPlan};
