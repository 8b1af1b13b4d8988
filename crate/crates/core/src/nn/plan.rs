use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::sparse::{
    build_kernel_map_subm, count_pairs_subm, pool_coords, CoordSet, KernelMap, KernelShape, PoolMap,
};

use super::config::NetworkConfig;

/// One resolution level of the hourglass.
#[derive(Debug)]
pub struct Level {
    pub coords: Arc<CoordSet>,
    /// How this level was pooled from the previous (finer) one.
    pub from_finer: Option<PoolMap>,
    kernel_maps: [OnceLock<Arc<KernelMap>>; 4],
    pair_counts: [OnceLock<u64>; 4],
}

impl Level {
    fn new(coords: Arc<CoordSet>, from_finer: Option<PoolMap>) -> Self {
        Self {
            coords,
            from_finer,
            kernel_maps: Default::default(),
            pair_counts: Default::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Kernel map for `shape`, built on first use.
    pub fn kernel_map(&self, shape: KernelShape) -> Arc<KernelMap> {
        self.kernel_maps[shape.slot()]
            .get_or_init(|| Arc::new(build_kernel_map_subm(&self.coords, shape)))
            .clone()
    }

    /// Total neighbor pairs for `shape`, without materializing the map.
    pub fn pair_count(&self, shape: KernelShape) -> u64 {
        *self.pair_counts[shape.slot()].get_or_init(|| match self.kernel_maps[shape.slot()].get() {
            Some(m) => m.total_pairs(),
            None => count_pairs_subm(&self.coords, shape),
        })
    }
}

/// Coordinate sets of every level plus the pooling relations between them.
/// Depends only on the input sites and the configured strides.
#[derive(Debug)]
pub struct NetworkPlan {
    pub levels: Vec<Level>,
}

impl NetworkPlan {
    pub fn new(coords: Arc<CoordSet>, cfg: &NetworkConfig) -> Result<Self> {
        if coords.dims() != cfg.grid.dims4() {
            return Err(Error::shape(
                "NetworkPlan",
                format!(
                    "input dims {:?} but config grid {:?}",
                    coords.dims(),
                    cfg.grid.dims4()
                ),
            ));
        }
        let mut levels = vec![Level::new(coords, None)];
        for stride in cfg.pool_strides() {
            let pm = pool_coords(&levels.last().unwrap().coords, stride)?;
            levels.push(Level::new(pm.coarse.clone(), Some(pm)));
        }
        Ok(Self { levels })
    }

    /// A plan with only the input level, for running single blocks.
    pub fn single(coords: Arc<CoordSet>) -> Self {
        Self {
            levels: vec![Level::new(coords, None)],
        }
    }

    pub fn level(&self, i: usize) -> &Level {
        &self.levels[i]
    }

    /// Pool map from level `coarse - 1` to `coarse`, after checking the stride.
    pub fn pool_map(&self, coarse: usize, stride: [u32; 4]) -> Result<&PoolMap> {
        let pm = self
            .levels
            .get(coarse)
            .and_then(|l| l.from_finer.as_ref())
            .ok_or_else(|| Error::Config(format!("no level {coarse} below the input")))?;
        if pm.stride != stride {
            return Err(Error::StrideMismatch {
                expected: pm.stride,
                got: stride,
            });
        }
        Ok(pm)
    }
}
