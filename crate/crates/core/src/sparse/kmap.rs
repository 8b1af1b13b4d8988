use super::{CoordSet, KernelShape};

/// Sentinel for "no neighbor" / "no source row".
pub const NONE: u32 = u32::MAX;

/// Gather/scatter plan of one submanifold convolution.
///
/// Stored as a dense `rows x K` neighbor table: entry `(j, k)` is the input
/// row `i` with `coords[i] = coords[j] - offset[k]`, or [`NONE`]. Iterating
/// offset `k` over `j` yields its `(in_row, out_row)` pairs sorted by output
/// row. Because input and output coordinate sets coincide, the table is
/// symmetric: `table[j][k] = i` iff `table[i][K-1-k] = j`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMap {
    shape: KernelShape,
    rows: usize,
    table: Vec<u32>,
}

impl KernelMap {
    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn volume(&self) -> usize {
        self.shape.volume()
    }

    pub fn table(&self) -> &[u32] {
        &self.table
    }

    #[inline]
    pub fn neighbor(&self, out_row: usize, k: usize) -> Option<usize> {
        let i = self.table[out_row * self.volume() + k];
        (i != NONE).then_some(i as usize)
    }

    /// `(in_row, out_row)` pairs of offset `k`, ascending in `out_row`.
    pub fn pairs(&self, k: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).filter_map(move |j| self.neighbor(j, k).map(|i| (i, j)))
    }

    pub fn pair_count(&self, k: usize) -> usize {
        self.pairs(k).count()
    }

    pub fn total_pairs(&self) -> u64 {
        self.table.iter().filter(|&&i| i != NONE).count() as u64
    }
}

pub fn build_kernel_map_subm(coords: &CoordSet, shape: KernelShape) -> KernelMap {
    let rows = coords.len();
    let k = shape.volume();
    let table = if shape == KernelShape::POINTWISE {
        (0..rows as u32).collect()
    } else {
        let offsets = shape.offsets();
        let mut table = Vec::with_capacity(rows * k);
        for &c in coords.coords() {
            for d in &offsets {
                let back = d.map(|v| -v);
                table.push(coords.find_offset(c, back).map_or(NONE, |i| i as u32));
            }
        }
        table
    };
    KernelMap { shape, rows, table }
}

/// Total number of pairs of the map `build_kernel_map_subm` would build, without storing it.
pub fn count_pairs_subm(coords: &CoordSet, shape: KernelShape) -> u64 {
    if shape == KernelShape::POINTWISE {
        return coords.len() as u64;
    }
    let offsets = shape.offsets();
    coords
        .coords()
        .iter()
        .map(|&c| {
            offsets
                .iter()
                .filter(|d| coords.find_offset(c, d.map(|v| -v)).is_some())
                .count() as u64
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(coords: Vec<[u32; 4]>, dims: [u32; 4]) -> CoordSet {
        CoordSet::new(coords, dims).unwrap()
    }

    #[test]
    fn isolated_site_pairs_only_with_itself() {
        let s = set(vec![[2, 2, 2, 2]], [5, 5, 5, 5]);
        let m = build_kernel_map_subm(&s, KernelShape::FULL);
        for k in 0..81 {
            let pairs: Vec<_> = m.pairs(k).collect();
            if k == KernelShape::FULL.center() {
                assert_eq!(pairs, vec![(0, 0)]);
            } else {
                assert!(pairs.is_empty(), "offset {k}");
            }
        }
    }

    #[test]
    fn w_neighbors_spatial_kernel() {
        let s = set(vec![[1, 1, 1, 0], [2, 1, 1, 0]], [4, 4, 4, 1]);
        let shape = KernelShape::SPATIAL;
        let m = build_kernel_map_subm(&s, shape);
        let offs = shape.offsets();
        let center: Vec<_> = m.pairs(shape.center()).collect();
        assert_eq!(center, vec![(0, 0), (1, 1)]);
        let plus = offs.iter().position(|o| *o == [1, 0, 0, 0]).unwrap();
        let minus = offs.iter().position(|o| *o == [-1, 0, 0, 0]).unwrap();
        // out = in + offset
        assert_eq!(m.pairs(plus).collect::<Vec<_>>(), vec![(0, 1)]);
        assert_eq!(m.pairs(minus).collect::<Vec<_>>(), vec![(1, 0)]);
        assert_eq!(m.total_pairs(), 4);
    }

    #[test]
    fn table_is_symmetric() {
        let coords: Vec<[u32; 4]> = (0..60u32)
            .map(|i| [i % 4, (i / 4) % 3, (i * 7) % 3, (i / 12) % 5])
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let s = set(coords, [4, 3, 3, 5]);
        for shape in KernelShape::ALL {
            let m = build_kernel_map_subm(&s, shape);
            let k = shape.volume();
            for j in 0..m.rows() {
                for o in 0..k {
                    if let Some(i) = m.neighbor(j, o) {
                        assert_eq!(m.neighbor(i, k - 1 - o), Some(j));
                    }
                }
            }
            assert_eq!(m.total_pairs(), count_pairs_subm(&s, shape));
        }
    }
}
