use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::pooled_dims;
use crate::voxelize::{GridConfig, VOXEL_CHANNELS};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Conv4d,
    StdbB,
    StdbP,
    StdbD,
}

impl BlockKind {
    pub const ALL: [BlockKind; 4] = [
        BlockKind::Conv4d,
        BlockKind::StdbB,
        BlockKind::StdbP,
        BlockKind::StdbD,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Conv4d => "conv4d",
            Self::StdbB => "stdb_b",
            Self::StdbP => "stdb_p",
            Self::StdbD => "stdb_d",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown block kind {s:?} (conv4d, stdb_b, stdb_p, stdb_d)"
                ))
            })
    }
}

/// One block's channel plan: set 1 emits `set1_ch`, set 2 (the block output) `set2_ch`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockConfig {
    pub kind: BlockKind,
    pub in_ch: usize,
    pub set1_ch: usize,
    pub set2_ch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    Pool([u32; 4]),
    Up([u32; 4]),
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    /// `(x, y)` filters per block.
    pub blocks: Vec<[usize; 2]>,
    pub resample: Resample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointHeadConfig {
    pub voxel_ch: usize,
    pub point_ch: usize,
    pub hidden: usize,
    pub out: usize,
}

impl Default for PointHeadConfig {
    fn default() -> Self {
        Self {
            voxel_ch: 16,
            point_ch: 16,
            hidden: 32,
            out: 3,
        }
    }
}

/// The hourglass: `k` pooling encoder stages, one bottleneck stage that
/// upsamples, then `k` decoder stages that fuse the matching encoder output
/// (all but the last upsample afterwards).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub schema_version: u32,
    pub block: BlockKind,
    pub grid: GridConfig,
    pub vfe_layers: usize,
    pub stages: Vec<StageConfig>,
    pub head: PointHeadConfig,
}

fn table_stages() -> Vec<StageConfig> {
    let st = |blocks: &[[usize; 2]], resample| StageConfig {
        blocks: blocks.to_vec(),
        resample,
    };
    let p3 = Resample::Pool([2, 2, 2, 1]);
    let u3 = Resample::Up([2, 2, 2, 1]);
    vec![
        st(&[[16, 32], [32, 32]], p3),
        st(&[[32, 64], [64, 64]], p3),
        st(&[[64, 64], [64, 64]], p3),
        st(&[[64, 64], [64, 64]], Resample::Pool([2, 2, 1, 1])),
        st(&[[64, 64], [64, 64]], Resample::Up([2, 2, 1, 1])),
        st(&[[64, 64]], u3),
        st(&[[64, 64]], u3),
        st(&[[64, 64]], u3),
        st(&[[32, 16]], Resample::None),
    ]
}

/// Dims and channels after one stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageShape {
    pub stage: usize,
    pub dims: [u32; 4],
    pub channels: usize,
}

/// How a decoder stage merges the encoder skip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipFusion {
    Add,
    Concat,
}

impl NetworkConfig {
    /// The full-resolution network (512x512x32 grid, five timesteps).
    pub fn full_scale(block: BlockKind) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            block,
            grid: GridConfig::full_scale(),
            vfe_layers: 1,
            stages: table_stages(),
            head: PointHeadConfig::default(),
        }
    }

    /// Same stages and channels on the 64x64x8 desk grid.
    pub fn desk(block: BlockKind) -> Self {
        Self {
            grid: GridConfig::desk(),
            ..Self::full_scale(block)
        }
    }

    pub fn with_grid(mut self, grid: GridConfig) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_block(mut self, block: BlockKind) -> Self {
        self.block = block;
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn num_encoder_stages(&self) -> usize {
        self.stages.len() / 2
    }

    pub fn encoder(&self) -> &[StageConfig] {
        &self.stages[..self.num_encoder_stages()]
    }

    pub fn bottleneck(&self) -> &StageConfig {
        &self.stages[self.num_encoder_stages()]
    }

    pub fn decoder(&self) -> &[StageConfig] {
        &self.stages[self.num_encoder_stages() + 1..]
    }

    pub fn pool_strides(&self) -> Vec<[u32; 4]> {
        self.encoder()
            .iter()
            .map(|s| match s.resample {
                Resample::Pool(st) => st,
                _ => [1; 4],
            })
            .collect()
    }

    /// Dims of every resolution level, finest first.
    pub fn level_dims(&self) -> Vec<[u32; 4]> {
        let mut dims = vec![self.grid.dims4()];
        for s in self.pool_strides() {
            dims.push(pooled_dims(*dims.last().unwrap(), s));
        }
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.grid.validate()?;
        if self.vfe_layers == 0 {
            return Err(Error::Config("vfe_layers must be at least 1".into()));
        }
        let n = self.stages.len();
        if n < 3 || n % 2 == 0 {
            return Err(Error::Config(format!(
                "need 2k+1 stages with k >= 1, got {n}"
            )));
        }
        let k = self.num_encoder_stages();
        let check_stride = |s: [u32; 4]| -> Result<()> {
            if s != [2, 2, 2, 1] && s != [2, 2, 1, 1] {
                return Err(Error::Config(format!(
                    "stride {s:?} is not (2,2,2,1) or (2,2,1,1)"
                )));
            }
            Ok(())
        };
        for (i, st) in self.stages.iter().enumerate() {
            if st.blocks.is_empty() || st.blocks.iter().flatten().any(|&c| c == 0) {
                return Err(Error::Config(format!(
                    "stage {} needs blocks with positive filters",
                    i + 1
                )));
            }
            let ok = match st.resample {
                Resample::Pool(s) => i < k && check_stride(s).is_ok(),
                Resample::Up(s) => i >= k && i < n - 1 && check_stride(s).is_ok(),
                Resample::None => i == n - 1,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "stage {}: {:?} not allowed there (pool in the first {k} stages, up in the next {k}, none last)",
                    i + 1,
                    st.resample
                )));
            }
        }
        let pools = self.pool_strides();
        for (j, st) in self.stages[k..n - 1].iter().enumerate() {
            if let Resample::Up(got) = st.resample {
                let expected = pools[k - 1 - j];
                if got != expected {
                    return Err(Error::StrideMismatch { expected, got });
                }
            }
        }
        let blocks = self.block_plan();
        if blocks[0].1.in_ch != VOXEL_CHANNELS {
            return Err(Error::Config(
                "first block must take the 16 encoder channels".into(),
            ));
        }
        let out = blocks.last().unwrap().1.set2_ch;
        if self.head.voxel_ch != out
            || self.head.point_ch != VOXEL_CHANNELS
            || self.head.out != 3
            || self.head.hidden == 0
        {
            return Err(Error::Config(format!(
                "point head {:?} does not fit network output {out} and point features {VOXEL_CHANNELS}",
                self.head
            )));
        }
        Ok(())
    }

    /// How decoder stage `j` (0-based) merges its skip, given its input channels.
    pub fn skip_fusion(decoder_in: usize, skip_ch: usize) -> SkipFusion {
        if decoder_in == skip_ch {
            SkipFusion::Add
        } else {
            SkipFusion::Concat
        }
    }

    /// `(stage number, block config)` for every block in execution order.
    pub fn block_plan(&self) -> Vec<(usize, BlockConfig)> {
        let k = self.num_encoder_stages();
        let mut plan = Vec::new();
        let mut ch = VOXEL_CHANNELS;
        let mut skips = Vec::new();
        for (i, st) in self.stages.iter().enumerate() {
            if i > k {
                let skip = skips.pop().unwrap_or(ch);
                if Self::skip_fusion(ch, skip) == SkipFusion::Concat {
                    ch += skip;
                }
            }
            for &[x, y] in &st.blocks {
                plan.push((
                    i + 1,
                    BlockConfig {
                        kind: self.block,
                        in_ch: ch,
                        set1_ch: x,
                        set2_ch: y,
                    },
                ));
                ch = y;
            }
            if i < k {
                skips.push(ch);
            }
        }
        plan
    }

    /// Stage-by-stage output shapes: encoder stages after pooling, the
    /// bottleneck and decoder stages at the resolution their blocks run on.
    pub fn shape_trace(&self) -> Vec<StageShape> {
        let dims = self.level_dims();
        let k = self.num_encoder_stages();
        let plan = self.block_plan();
        let mut out = vec![StageShape {
            stage: 0,
            dims: dims[0],
            channels: VOXEL_CHANNELS,
        }];
        for i in 0..self.stages.len() {
            let channels = plan
                .iter()
                .rev()
                .find(|(s, _)| *s == i + 1)
                .map_or(0, |(_, b)| b.set2_ch);
            let level = if i < k { i + 1 } else { 2 * k - i };
            out.push(StageShape {
                stage: i + 1,
                dims: dims[level],
                channels,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_configs_validate() {
        for kind in BlockKind::ALL {
            NetworkConfig::full_scale(kind).validate().unwrap();
            NetworkConfig::desk(kind).validate().unwrap();
        }
    }

    #[test]
    fn json_round_trip() {
        let cfg = NetworkConfig::desk(BlockKind::StdbD);
        let back: NetworkConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn block_kind_names() {
        for kind in BlockKind::ALL {
            assert_eq!(kind.name().parse::<BlockKind>().unwrap(), kind);
        }
        assert!("stdb_x".parse::<BlockKind>().is_err());
    }

    #[test]
    fn mismatched_up_stride_is_rejected() {
        let mut cfg = NetworkConfig::full_scale(BlockKind::StdbP);
        cfg.stages[4].resample = Resample::Up([2, 2, 2, 1]);
        assert!(matches!(
            cfg.validate(),
            Err(Error::StrideMismatch {
                expected: [2, 2, 1, 1],
                got: [2, 2, 2, 1]
            })
        ));
    }

    #[test]
    fn time_stride_is_rejected() {
        let mut cfg = NetworkConfig::full_scale(BlockKind::StdbP);
        cfg.stages[0].resample = Resample::Pool([2, 2, 2, 2]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stage_nine_concatenates() {
        let plan = NetworkConfig::full_scale(BlockKind::StdbP).block_plan();
        assert_eq!(plan.len(), 14);
        let last = plan.last().unwrap().1;
        assert_eq!((last.in_ch, last.set1_ch, last.set2_ch), (96, 32, 16));
        assert_eq!(plan[0].1.in_ch, 16);
        assert_eq!(plan[10].1.in_ch, 64);
    }
}
