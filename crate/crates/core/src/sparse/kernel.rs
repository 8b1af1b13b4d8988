use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel extent along (w, l, h, t). Only the four shapes used by the network exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct KernelShape([u32; 4]);

impl KernelShape {
    pub const FULL: KernelShape = KernelShape([3, 3, 3, 3]);
    pub const SPATIAL: KernelShape = KernelShape([3, 3, 3, 1]);
    pub const TEMPORAL: KernelShape = KernelShape([1, 1, 1, 3]);
    pub const POINTWISE: KernelShape = KernelShape([1, 1, 1, 1]);

    pub const ALL: [KernelShape; 4] = [Self::FULL, Self::SPATIAL, Self::TEMPORAL, Self::POINTWISE];

    pub fn new(extent: [u32; 4]) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.0 == extent)
            .ok_or_else(|| Error::Config(format!("unsupported kernel shape {extent:?}")))
    }

    pub fn extent(self) -> [u32; 4] {
        self.0
    }

    /// Number of offsets, K.
    pub fn volume(self) -> usize {
        self.0.iter().product::<u32>() as usize
    }

    pub fn center(self) -> usize {
        self.volume() / 2
    }

    /// Index into [`KernelShape::ALL`].
    pub fn slot(self) -> usize {
        Self::ALL
            .iter()
            .position(|&k| k == self)
            .expect("closed set")
    }

    /// Centered offsets, w slowest and t fastest. Offset `K-1-k` is the negation of offset `k`.
    pub fn offsets(self) -> Vec<[i32; 4]> {
        let r = self.0.map(|e| (e / 2) as i32);
        let mut out = Vec::with_capacity(self.volume());
        for dw in -r[0]..=r[0] {
            for dl in -r[1]..=r[1] {
                for dh in -r[2]..=r[2] {
                    for dt in -r[3]..=r[3] {
                        out.push([dw, dl, dh, dt]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<[u32; 4]> for KernelShape {
    type Error = Error;

    fn try_from(v: [u32; 4]) -> Result<Self> {
        Self::new(v)
    }
}

impl From<KernelShape> for [u32; 4] {
    fn from(k: KernelShape) -> Self {
        k.0
    }
}

impl fmt::Display for KernelShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "{a}x{b}x{c}x{d}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_antisymmetric_about_center() {
        for k in KernelShape::ALL {
            let offs = k.offsets();
            assert_eq!(offs.len(), k.volume());
            assert_eq!(offs[k.center()], [0; 4]);
            for (i, o) in offs.iter().enumerate() {
                assert_eq!(offs[k.volume() - 1 - i], o.map(|v| -v));
            }
        }
    }

    #[test]
    fn only_network_shapes_are_accepted() {
        assert!(KernelShape::new([3, 3, 1, 1]).is_err());
        assert_eq!(
            KernelShape::new([1, 1, 1, 3]).unwrap(),
            KernelShape::TEMPORAL
        );
        assert_eq!(KernelShape::FULL.volume(), 81);
    }
}
