use rustc_hash::FxHashMap;

use crate::error::{Error, Result};

/// Largest supported grid; coordinates pack into 16/16/10/6 bits.
pub const MAX_DIMS: [u32; 4] = [1 << 16, 1 << 16, 1 << 10, 1 << 6];

#[derive(Clone, Debug)]
pub struct CoordSet {
    coords: Vec<[u32; 4]>,
    dims: [u32; 4],
    index: FxHashMap<u64, u32>,
}

impl PartialEq for CoordSet {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.coords == other.coords
    }
}

#[inline]
pub(crate) fn pack(c: [u32; 4]) -> u64 {
    (c[0] as u64) | (c[1] as u64) << 16 | (c[2] as u64) << 32 | (c[3] as u64) << 42
}

impl CoordSet {
    pub fn new(coords: Vec<[u32; 4]>, dims: [u32; 4]) -> Result<Self> {
        if dims.iter().zip(&MAX_DIMS).any(|(d, m)| d > m) {
            return Err(Error::shape(
                "CoordSet::new",
                format!("dims {dims:?} exceed {MAX_DIMS:?}"),
            ));
        }
        let mut index = FxHashMap::with_capacity_and_hasher(coords.len(), Default::default());
        for (row, c) in coords.iter().enumerate() {
            if c.iter().zip(&dims).any(|(v, d)| v >= d) {
                return Err(Error::shape(
                    "CoordSet::new",
                    format!("coordinate {c:?} outside dims {dims:?}"),
                ));
            }
            if index.insert(pack(*c), row as u32).is_some() {
                return Err(Error::shape(
                    "CoordSet::new",
                    format!("duplicate coordinate {c:?}"),
                ));
            }
        }
        Ok(Self {
            coords,
            dims,
            index,
        })
    }

    pub fn empty(dims: [u32; 4]) -> Self {
        Self {
            coords: Vec::new(),
            dims,
            index: FxHashMap::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dims(&self) -> [u32; 4] {
        self.dims
    }

    pub fn coords(&self) -> &[[u32; 4]] {
        &self.coords
    }

    pub fn get(&self, row: usize) -> [u32; 4] {
        self.coords[row]
    }

    pub fn find(&self, c: [u32; 4]) -> Option<usize> {
        self.index.get(&pack(c)).map(|&r| r as usize)
    }

    /// Row of `base + delta`, if that site is inside the grid and active.
    #[inline]
    pub fn find_offset(&self, base: [u32; 4], delta: [i32; 4]) -> Option<usize> {
        let mut c = [0u32; 4];
        for a in 0..4 {
            let v = base[a] as i64 + delta[a] as i64;
            if v < 0 || v >= self.dims[a] as i64 {
                return None;
            }
            c[a] = v as u32;
        }
        self.find(c)
    }

    /// Lexicographic (t, h, l, w) order, the canonical row order of this crate.
    pub fn is_canonically_sorted(&self) -> bool {
        self.coords
            .windows(2)
            .all(|w| canonical_key(w[0]) < canonical_key(w[1]))
    }
}

pub(crate) fn canonical_key(c: [u32; 4]) -> (u32, u32, u32, u32) {
    (c[3], c[2], c[1], c[0])
}
