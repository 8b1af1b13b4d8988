use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{network, BlockKind, Exec, NetworkConfig, NetworkPlan, PreparedScene, Shape};
use crate::sparse::{CoordSet, KernelShape};
use crate::voxelize::{RAW_FEATURES, VOXEL_CHANNELS};

/// FLOPs of one op. `stage` 0 is the point encoder, `stages + 1` the point head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerFlops {
    pub stage: usize,
    pub block: Option<usize>,
    pub name: String,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub block: BlockKind,
    pub layers: Vec<LayerFlops>,
    pub total: u64,
}

impl FlopReport {
    fn new(block: BlockKind, layers: Vec<LayerFlops>) -> Self {
        let total = layers.iter().map(|l| l.flops).sum();
        Self {
            block,
            layers,
            total,
        }
    }

    /// Sums per `(stage, block)` in first-seen order.
    pub fn by_block(&self) -> Vec<(usize, Option<usize>, u64)> {
        let mut out: Vec<(usize, Option<usize>, u64)> = Vec::new();
        for l in &self.layers {
            match out.last_mut() {
                Some(last) if last.0 == l.stage && last.1 == l.block => last.2 += l.flops,
                _ => out.push((l.stage, l.block, l.flops)),
            }
        }
        out
    }

    pub fn stage_total(&self, stage: usize) -> u64 {
        self.layers
            .iter()
            .filter(|l| l.stage == stage)
            .map(|l| l.flops)
            .sum()
    }

    /// `stage,block,flops` rows; `block` is empty for stage-level ops.
    pub fn to_csv(&self, stage_names: impl Fn(usize) -> String) -> String {
        let mut out = String::from("stage,block,flops\n");
        for (stage, block, flops) in self.by_block() {
            let b = block.map_or(String::new(), |b| b.to_string());
            out.push_str(&format!("{},{b},{flops}\n", stage_names(stage)));
        }
        out
    }
}

/// Counts FLOPs from kernel-map pair counts: a conv costs `2 · C_in · C_out ·
/// pairs`, BatchNorm 2 per element, ReLU and add 1 per element, mean pooling
/// 1 per input element, unpooling nothing.
pub struct FlopExec<'a> {
    plan: &'a NetworkPlan,
    stage: usize,
    block: Option<usize>,
    layers: Vec<LayerFlops>,
}

impl<'a> FlopExec<'a> {
    pub fn new(plan: &'a NetworkPlan) -> Self {
        Self {
            plan,
            stage: 0,
            block: None,
            layers: Vec::new(),
        }
    }

    fn record(&mut self, name: &str, flops: u64) {
        self.layers.push(LayerFlops {
            stage: self.stage,
            block: self.block,
            name: name.to_string(),
            flops,
        });
    }

    fn sites(&self, level: usize) -> Result<u64> {
        self.plan
            .levels
            .get(level)
            .map(|l| l.len() as u64)
            .ok_or_else(|| Error::Config(format!("level {level} outside the plan")))
    }

    pub fn into_layers(self) -> Vec<LayerFlops> {
        self.layers
    }
}

impl Exec for FlopExec<'_> {
    type Feat = Shape;

    fn channels(&self, x: &Shape) -> usize {
        x.1
    }

    fn conv(&mut self, name: &str, x: &Shape, shape: KernelShape, cout: usize) -> Result<Shape> {
        self.sites(x.0)?;
        let pairs = self.plan.level(x.0).pair_count(shape);
        self.record(name, 2 * x.1 as u64 * cout as u64 * pairs);
        Ok((x.0, cout))
    }

    fn batch_norm(&mut self, name: &str, x: &Shape) -> Result<Shape> {
        let n = self.sites(x.0)?;
        self.record(name, 2 * n * x.1 as u64);
        Ok(*x)
    }

    fn relu(&mut self, x: &Shape) -> Result<Shape> {
        let n = self.sites(x.0)?;
        self.record("relu", n * x.1 as u64);
        Ok(*x)
    }

    fn add(&mut self, a: &Shape, b: &Shape) -> Result<Shape> {
        if a != b {
            return Err(Error::shape("add", format!("{a:?} vs {b:?}")));
        }
        let n = self.sites(a.0)?;
        self.record("add", n * a.1 as u64);
        Ok(*a)
    }

    fn concat(&mut self, a: &Shape, b: &Shape) -> Result<Shape> {
        if a.0 != b.0 {
            return Err(Error::shape("concat", format!("{a:?} vs {b:?}")));
        }
        Ok((a.0, a.1 + b.1))
    }

    fn pool(&mut self, x: &Shape, stride: [u32; 4]) -> Result<Shape> {
        self.plan.pool_map(x.0 + 1, stride)?;
        let n = self.sites(x.0)?;
        self.record("pool", n * x.1 as u64);
        Ok((x.0 + 1, x.1))
    }

    fn up(&mut self, x: &Shape, stride: [u32; 4]) -> Result<Shape> {
        self.plan.pool_map(x.0, stride)?;
        self.record("up", 0);
        Ok((x.0 - 1, x.1))
    }

    fn begin(&mut self, stage: usize, block: Option<usize>) {
        self.stage = stage;
        self.block = block;
    }
}

/// FLOPs of the hourglass alone for input sites `coords`.
pub fn count_flops(cfg: &NetworkConfig, coords: Arc<CoordSet>) -> Result<FlopReport> {
    let plan = NetworkPlan::new(coords, cfg)?;
    count_on_plan(cfg, &plan)
}

fn count_on_plan(cfg: &NetworkConfig, plan: &NetworkPlan) -> Result<FlopReport> {
    cfg.validate()?;
    let mut e = FlopExec::new(plan);
    network(&mut e, cfg, &(0, VOXEL_CHANNELS))?;
    Ok(FlopReport::new(cfg.block, e.into_layers()))
}

/// Point encoder, hourglass and point head on a prepared sample.
pub fn count_pipeline_flops(cfg: &NetworkConfig, prep: &PreparedScene) -> Result<FlopReport> {
    let net = count_on_plan(cfg, &prep.plan)?;
    let c = VOXEL_CHANNELS as u64;
    let points = prep.frames.raw.rows() as u64;
    let mut layers = Vec::new();
    let mut push = |stage, name: &str, flops| {
        layers.push(LayerFlops {
            stage,
            block: None,
            name: name.to_string(),
            flops,
        })
    };
    for i in 0..cfg.vfe_layers {
        let cin = if i == 0 { RAW_FEATURES as u64 } else { c };
        push(0, "vfe.linear", 2 * points * cin * c);
        push(0, "vfe.bn", 2 * points * c);
        push(0, "vfe.relu", points * c);
    }
    push(0, "vfe.mean", points * c);
    let head_stage = cfg.stages.len() + 1;
    let n = prep.num_in_range() as u64;
    let h = &cfg.head;
    let fc1_in = (h.voxel_ch + h.point_ch) as u64;
    let mut tail = vec![
        ("head.fc1", 2 * n * fc1_in * h.hidden as u64),
        ("head.relu", n * h.hidden as u64),
        ("head.fc2", 2 * n * h.hidden as u64 * h.out as u64),
    ];
    let mut all = layers;
    all.extend(net.layers);
    all.extend(tail.drain(..).map(|(name, flops)| LayerFlops {
        stage: head_stage,
        block: None,
        name: name.to_string(),
        flops,
    }));
    Ok(FlopReport::new(cfg.block, all))
}
