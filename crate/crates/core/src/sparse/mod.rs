//! Sparse 4D tensors and submanifold convolution.
//!
//! Coordinates are `(w, l, h, t)`. A [`CoordSet`] owns the active sites of one
//! resolution level; features live in a row-major matrix aligned with it.
//! Convolution is planned once per (coordinate set, kernel shape) as a
//! [`KernelMap`] and executed as gather / GEMM / scatter over kernel offsets.

mod coords;
mod kernel;
mod kmap;
mod ops;

pub use coords::{CoordSet, MAX_DIMS};
pub use kernel::KernelShape;
pub use kmap::{build_kernel_map_subm, count_pairs_subm, KernelMap, NONE};
pub use ops::{
    conv_backward, conv_forward, conv_subm, gather_rows, pool_coords, pool_down, pooled_dims,
    scatter_rows, segment_mean, segment_mean_backward, slice_time, up_sample, PoolMap, Segments,
    SparseTensor3D,
};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor4D<T> {
    pub coords: Arc<CoordSet>,
    pub features: Matrix<T>,
}

impl<T: Real> SparseTensor4D<T> {
    pub fn new(coords: Arc<CoordSet>, features: Matrix<T>) -> Result<Self> {
        if coords.len() != features.rows() {
            return Err(Error::shape(
                "SparseTensor4D::new",
                format!(
                    "{} coordinates but {} feature rows",
                    coords.len(),
                    features.rows()
                ),
            ));
        }
        Ok(Self { coords, features })
    }

    pub fn empty(dims: [u32; 4], channels: usize) -> Self {
        Self {
            coords: Arc::new(CoordSet::empty(dims)),
            features: Matrix::zeros(0, channels),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    pub fn dims(&self) -> [u32; 4] {
        self.coords.dims()
    }

    /// Rows sorted by coordinate, for order-independent comparisons.
    pub fn sorted_rows(&self) -> Vec<([u32; 4], Vec<T>)> {
        let mut rows: Vec<_> = self
            .coords
            .coords()
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, self.features.row(i).to_vec()))
            .collect();
        rows.sort_by_key(|(c, _)| *c);
        rows
    }
}
