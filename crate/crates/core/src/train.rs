//! Speed-binned flow loss and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, ParamStore, Session, Var};
use crate::error::{Error, Result};
use crate::eval::{split_epe, BucketConfig};
use crate::nn::{forward, init_params, predict, BlockKind, NetworkConfig, PreparedScene, CONFIG_SCHEMA_VERSION};
use crate::tensor::{Matrix, Real};

/// Points are binned by ground-truth speed at the interior `speed_bin_edges`
/// (m/s); bin `b` covers `[edges[b-1], edges[b])` with the outer bins open.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub speed_bin_edges: Vec<f32>,
    pub bin_weights: Vec<f32>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            speed_bin_edges: vec![0.05, 0.5],
            bin_weights: vec![1.0, 1.0, 1.0],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speed_bin_edges.windows(2).any(|w| !(w[0] < w[1]))
            || self.speed_bin_edges.iter().any(|e| !e.is_finite())
        {
            return Err(Error::Config(
                "speed bin edges must be finite and strictly increasing".into(),
            ));
        }
        if self.bin_weights.len() != self.speed_bin_edges.len() + 1 {
            return Err(Error::Config(format!(
                "{} edges need {} weights, got {}",
                self.speed_bin_edges.len(),
                self.speed_bin_edges.len() + 1,
                self.bin_weights.len()
            )));
        }
        if self
            .bin_weights
            .iter()
            .any(|&w| !(w > 0.0 && w.is_finite()))
        {
            return Err(Error::Config("bin weights must be positive".into()));
        }
        Ok(())
    }

    pub fn bin_of(&self, speed: f32) -> usize {
        self.speed_bin_edges.partition_point(|&e| e <= speed)
    }

    /// Per-point loss coefficients: `w_b / (|b| · Σ_{non-empty b} w_b)`.
    pub fn coefficients(&self, speed: &[f32]) -> Vec<f64> {
        let bins: Vec<usize> = speed.iter().map(|&s| self.bin_of(s)).collect();
        let mut counts = vec![0usize; self.bin_weights.len()];
        bins.iter().for_each(|&b| counts[b] += 1);
        let total: f64 = counts
            .iter()
            .zip(&self.bin_weights)
            .filter(|(&c, _)| c > 0)
            .map(|(_, &w)| w as f64)
            .sum();
        bins.iter()
            .map(|&b| self.bin_weights[b] as f64 / (counts[b] as f64 * total))
            .collect()
    }
}

/// Weighted mean over speed bins of the per-bin mean endpoint error.
pub fn flow_loss<T: Real>(
    s: &mut Session<T>,
    pred: Var,
    gt: &Matrix<f32>,
    speed: &[f32],
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    if speed.len() != gt.rows() {
        return Err(Error::shape(
            "flow_loss",
            format!("{} speeds for {} rows", speed.len(), gt.rows()),
        ));
    }
    let coef = cfg.coefficients(speed).into_iter().map(T::lit).collect();
    s.tape.weighted_distance(pred, gt.cast(), coef)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Scenes whose gradients are summed (and averaged) per optimizer step.
    pub accumulate: usize,
    pub loss: LossConfig,
    /// Validation EPE is measured every this many epochs and after the last;
    /// 0 means only after the last.
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            adam: AdamConfig::default(),
            seed: 0,
            accumulate: 1,
            loss: LossConfig::default(),
            validate_every: 1,
        }
    }
}

/// Everything a run needs besides data: the file behind `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub buckets: BucketConfig,
}

impl RunConfig {
    pub fn desk(block: BlockKind) -> Self {
        Self::with_network(NetworkConfig::desk(block))
    }

    pub fn full_scale(block: BlockKind) -> Self {
        Self::with_network(NetworkConfig::full_scale(block))
    }

    pub fn with_network(network: NetworkConfig) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            network,
            train: TrainConfig::default(),
            buckets: BucketConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.network.validate()?;
        self.train.loss.validate()?;
        self.train.adam.validate()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub mean_dynamic_epe: Option<f64>,
    pub mean_static_epe: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub store: ParamStore<f32>,
    pub history: Vec<EpochRecord>,
    /// Loss of every scene visit, in order.
    pub step_losses: Vec<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    let mut out = String::from("epoch,loss,mean_dynamic_epe,mean_static_epe\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.6},{},{}\n",
            r.epoch,
            r.loss,
            fmt(r.mean_dynamic_epe),
            fmt(r.mean_static_epe)
        ));
    }
    out
}

/// Mean dynamic / static endpoint error of `store` over `scenes` (eval-mode BatchNorm).
pub fn evaluate_epe(
    store: &ParamStore<f32>,
    net: &NetworkConfig,
    scenes: &[PreparedScene],
) -> Result<(Option<f64>, Option<f64>)> {
    let mut sums = [(0.0, 0usize); 2];
    for prep in scenes {
        let t = prep
            .targets
            .as_ref()
            .ok_or_else(|| Error::Config("evaluation scene without ground truth".into()))?;
        let pred = predict(store, net, prep)?;
        let split = split_epe(&pred, &t.motion, &t.speed);
        for (acc, part) in sums.iter_mut().zip([split.dynamic, split.static_]) {
            acc.0 += part.0;
            acc.1 += part.1;
        }
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    Ok((mean(sums[0]), mean(sums[1])))
}

/// Train from `init` (or fresh parameters seeded by `cfg.seed`).
///
/// Each epoch visits every training scene once in a seeded random order.
/// Validation EPE is measured on `val`, or on the training scenes when `val` is empty.
pub fn train_loop(
    train: &[PreparedScene],
    val: &[PreparedScene],
    net: &NetworkConfig,
    cfg: &TrainConfig,
    init: Option<ParamStore<f32>>,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 || cfg.accumulate == 0 {
        return Err(Error::Config(
            "epochs and accumulate must be at least 1".into(),
        ));
    }
    if train.is_empty() {
        return Err(Error::Config("no training scenes".into()));
    }
    cfg.loss.validate()?;
    cfg.adam.validate()?;
    let mut store = match init {
        Some(s) => s,
        None => init_params(net, cfg.seed)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f5c_e7e5);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (i, &idx) in order.iter().enumerate() {
            let prep = &train[idx];
            let t = prep.targets.as_ref().ok_or_else(|| {
                Error::Config(format!("training scene {idx} has no ground truth"))
            })?;
            let mut s = Session::new(&store, true);
            let pred = forward(&mut s, net, prep)?;
            let loss = flow_loss(&mut s, pred, &t.motion, &t.speed, &cfg.loss)?;
            let outcome = s.finish(loss)?;
            let lv = outcome.loss as f64;
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {epoch}, visit {i}, scene {idx}"
                )));
            }
            outcome.apply(&mut store)?;
            if !store.grads_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient at epoch {epoch}, visit {i}, scene {idx}"
                )));
            }
            on_step(step_losses.len(), lv);
            step_losses.push(lv);
            epoch_loss += lv;
            if (i + 1) % cfg.accumulate == 0 || i + 1 == order.len() {
                let k = i % cfg.accumulate + 1;
                if k > 1 {
                    store.scale_grads(1.0 / k as f32);
                }
                store.adam_step(&cfg.adam)?;
            }
        }
        let last = epoch + 1 == cfg.epochs;
        let due = cfg.validate_every > 0 && (epoch + 1) % cfg.validate_every == 0;
        let (dynamic, static_) = if last || due {
            evaluate_epe(&store, net, if val.is_empty() { train } else { val })?
        } else {
            (None, None)
        };
        history.push(EpochRecord {
            epoch: epoch + 1,
            loss: epoch_loss / train.len() as f64,
            mean_dynamic_epe: dynamic,
            mean_static_epe: static_,
        });
    }
    Ok(TrainOutcome {
        store,
        history,
        step_losses,
    })
}
