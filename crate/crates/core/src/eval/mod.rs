//! Scene-flow metrics and the analytic FLOP counter.

mod flops;
mod metrics;

pub use flops::{count_flops, count_pipeline_flops, FlopExec, FlopReport, LayerFlops};
pub use metrics::{
    bucket_normalized_epe, dynamic_iou, matrix_rows3, split_epe, three_way_epe, BucketConfig,
    BucketResult, EvalReport, SplitEpe, ThreeWayResult, DYNAMIC_SPEED,
};
