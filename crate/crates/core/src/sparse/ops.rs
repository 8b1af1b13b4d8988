use std::sync::Arc;

use super::coords::canonical_key;
use super::{CoordSet, KernelMap, SparseTensor4D, NONE};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Matrix, Real};

/// Neighbor pairs of offset `k` as parallel `(inputs, outputs)` lists, ascending by output row.
fn offset_pairs(map: &KernelMap, k: usize, ins: &mut Vec<u32>, outs: &mut Vec<u32>) {
    ins.clear();
    outs.clear();
    let kv = map.volume();
    for (j, row) in map.table().chunks_exact(kv).enumerate() {
        if row[k] != NONE {
            ins.push(row[k]);
            outs.push(j as u32);
        }
    }
}

fn gather_into<T: Real>(src: &[T], cols: usize, rows: &[u32], dst: &mut Vec<T>) {
    dst.clear();
    for &r in rows {
        dst.extend_from_slice(&src[r as usize * cols..(r as usize + 1) * cols]);
    }
}

fn scatter_add<T: Real>(src: &[T], cols: usize, rows: &[u32], dst: &mut [T]) {
    for (chunk, &r) in src.chunks_exact(cols).zip(rows) {
        for (d, &v) in dst[r as usize * cols..(r as usize + 1) * cols]
            .iter_mut()
            .zip(chunk)
        {
            *d += v;
        }
    }
}

/// `out[j] = bias + Σ_k x[table[j][k]] · W[k]`, with `W` stored as `(K·C_in) x C_out`.
///
/// Executed offset by offset as gather → GEMM → scatter. Offsets are visited
/// in a fixed order and each offset's pairs ascend by output row, so every
/// output row accumulates its terms in the same order on every run.
pub fn conv_forward<T: Real>(
    x: &Matrix<T>,
    weight: &Matrix<T>,
    bias: &[T],
    map: &KernelMap,
) -> Result<Matrix<T>> {
    let k_vol = map.volume();
    let cin = x.cols();
    let cout = weight.cols();
    if x.rows() != map.rows() {
        return Err(Error::shape(
            "conv_subm",
            format!(
                "{} feature rows but kernel map over {} sites",
                x.rows(),
                map.rows()
            ),
        ));
    }
    if weight.rows() != k_vol * cin {
        return Err(Error::shape(
            "conv_subm",
            format!(
                "weight has {} rows, expected K·C_in = {}·{}",
                weight.rows(),
                k_vol,
                cin
            ),
        ));
    }
    if bias.len() != cout {
        return Err(Error::shape(
            "conv_subm",
            format!("bias {} vs C_out {cout}", bias.len()),
        ));
    }
    let rows = map.rows();
    let mut out = Matrix::zeros(rows, cout);
    for r in 0..rows {
        out.row_mut(r).copy_from_slice(bias);
    }
    if cout == 0 || rows == 0 {
        return Ok(out);
    }
    let center = map.shape().center();
    let (mut ins, mut outs) = (Vec::new(), Vec::new());
    let (mut a, mut t) = (Vec::new(), Vec::new());
    for k in 0..k_vol {
        let wk = &weight.as_slice()[k * cin * cout..(k + 1) * cin * cout];
        if k == center {
            // submanifold: the center offset pairs every row with itself
            gemm(
                rows,
                cin,
                cout,
                x.as_slice(),
                (cin, 1),
                wk,
                (cout, 1),
                T::one(),
                out.as_mut_slice(),
                (cout, 1),
            );
            continue;
        }
        offset_pairs(map, k, &mut ins, &mut outs);
        if ins.is_empty() {
            continue;
        }
        gather_into(x.as_slice(), cin, &ins, &mut a);
        t.clear();
        t.resize(ins.len() * cout, T::zero());
        gemm(
            ins.len(),
            cin,
            cout,
            &a,
            (cin, 1),
            wk,
            (cout, 1),
            T::zero(),
            &mut t,
            (cout, 1),
        );
        scatter_add(&t, cout, &outs, out.as_mut_slice());
    }
    Ok(out)
}

/// Gradients of [`conv_forward`] with respect to input, weight and bias.
pub fn conv_backward<T: Real>(
    x: &Matrix<T>,
    weight: &Matrix<T>,
    map: &KernelMap,
    grad_out: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
    let k_vol = map.volume();
    let rows = map.rows();
    let cin = x.cols();
    let cout = weight.cols();
    let center = map.shape().center();
    let mut grad_x = Matrix::zeros(rows, cin);
    let mut grad_w = Matrix::zeros(k_vol * cin, cout);
    let grad_b = grad_out.column_sums();
    if rows == 0 || cin == 0 || cout == 0 {
        return (grad_x, grad_w, grad_b);
    }
    let (xs, gs) = (x.as_slice(), grad_out.as_slice());
    let (mut ins, mut outs) = (Vec::new(), Vec::new());
    let (mut a, mut g, mut t) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..k_vol {
        let wk = &weight.as_slice()[k * cin * cout..(k + 1) * cin * cout];
        let gw = &mut grad_w.as_mut_slice()[k * cin * cout..(k + 1) * cin * cout];
        if k == center {
            gemm(
                rows,
                cout,
                cin,
                gs,
                (cout, 1),
                wk,
                (1, cout),
                T::one(),
                grad_x.as_mut_slice(),
                (cin, 1),
            );
            gemm(
                cin,
                rows,
                cout,
                xs,
                (1, cin),
                gs,
                (cout, 1),
                T::zero(),
                gw,
                (cout, 1),
            );
            continue;
        }
        offset_pairs(map, k, &mut ins, &mut outs);
        if ins.is_empty() {
            continue;
        }
        let p = ins.len();
        gather_into(gs, cout, &outs, &mut g);
        gather_into(xs, cin, &ins, &mut a);
        // dW[k] = Aᵀ G
        gemm(
            cin,
            p,
            cout,
            &a,
            (1, cin),
            &g,
            (cout, 1),
            T::zero(),
            gw,
            (cout, 1),
        );
        // dX[ins] += G W[k]ᵀ
        t.clear();
        t.resize(p * cin, T::zero());
        gemm(
            p,
            cout,
            cin,
            &g,
            (cout, 1),
            wk,
            (1, cout),
            T::zero(),
            &mut t,
            (cin, 1),
        );
        scatter_add(&t, cin, &ins, grad_x.as_mut_slice());
    }
    (grad_x, grad_w, grad_b)
}

pub fn conv_subm<T: Real>(
    x: &SparseTensor4D<T>,
    weight: &Matrix<T>,
    bias: &[T],
    map: &KernelMap,
) -> Result<SparseTensor4D<T>> {
    let features = conv_forward(&x.features, weight, bias, map)?;
    SparseTensor4D::new(x.coords.clone(), features)
}

/// Grouping of source rows into output rows (CSR). A source row belongs to at most one group.
#[derive(Clone, Debug, PartialEq)]
pub struct Segments {
    offsets: Vec<u32>,
    members: Vec<u32>,
    sources: usize,
}

impl Segments {
    /// Build from a source-row → group assignment; [`NONE`] rows are dropped.
    /// Members of each group stay in ascending source order.
    pub fn from_assignment(group_of: &[u32], groups: usize) -> Self {
        let mut counts = vec![0u32; groups + 1];
        for &g in group_of {
            if g != NONE {
                counts[g as usize + 1] += 1;
            }
        }
        for s in 0..groups {
            counts[s + 1] += counts[s];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut members = vec![0u32; offsets[groups] as usize];
        for (src, &g) in group_of.iter().enumerate() {
            if g != NONE {
                members[cursor[g as usize] as usize] = src as u32;
                cursor[g as usize] += 1;
            }
        }
        Self {
            offsets,
            members,
            sources: group_of.len(),
        }
    }

    pub fn groups(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn members(&self, group: usize) -> &[u32] {
        &self.members[self.offsets[group] as usize..self.offsets[group + 1] as usize]
    }
}

pub fn segment_mean<T: Real>(x: &Matrix<T>, seg: &Segments) -> Result<Matrix<T>> {
    if x.rows() != seg.sources() {
        return Err(Error::shape(
            "segment_mean",
            format!("{} rows but segments over {}", x.rows(), seg.sources()),
        ));
    }
    let c = x.cols();
    let mut out = Matrix::zeros(seg.groups(), c);
    for g in 0..seg.groups() {
        let members = seg.members(g);
        if members.is_empty() {
            continue;
        }
        let acc = out.row_mut(g);
        for &m in members {
            for (a, &v) in acc.iter_mut().zip(x.row(m as usize)) {
                *a += v;
            }
        }
        let n = T::lit(members.len() as f64);
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(out)
}

pub fn segment_mean_backward<T: Real>(grad_out: &Matrix<T>, seg: &Segments) -> Matrix<T> {
    let mut gx = Matrix::zeros(seg.sources(), grad_out.cols());
    for g in 0..seg.groups() {
        let members = seg.members(g);
        if members.is_empty() {
            continue;
        }
        let n = T::lit(members.len() as f64);
        for &m in members {
            for (a, &v) in gx.row_mut(m as usize).iter_mut().zip(grad_out.row(g)) {
                *a = v / n;
            }
        }
    }
    gx
}

/// `out[r] = x[index[r]]`, zero rows where the index is [`NONE`].
pub fn gather_rows<T: Real>(x: &Matrix<T>, index: &[u32]) -> Result<Matrix<T>> {
    let c = x.cols();
    let mut out = Matrix::zeros(index.len(), c);
    for (r, &i) in index.iter().enumerate() {
        if i == NONE {
            continue;
        }
        if i as usize >= x.rows() {
            return Err(Error::shape(
                "gather_rows",
                format!("index {i} out of range for {} rows", x.rows()),
            ));
        }
        out.row_mut(r).copy_from_slice(x.row(i as usize));
    }
    Ok(out)
}

/// Adjoint of [`gather_rows`]: accumulates rows back in ascending output order.
pub fn scatter_rows<T: Real>(grad_out: &Matrix<T>, index: &[u32], sources: usize) -> Matrix<T> {
    let mut gx = Matrix::zeros(sources, grad_out.cols());
    for (r, &i) in index.iter().enumerate() {
        if i == NONE {
            continue;
        }
        for (a, &v) in gx.row_mut(i as usize).iter_mut().zip(grad_out.row(r)) {
            *a += v;
        }
    }
    gx
}

/// Parent assignment from a fine coordinate set to its pooled coarse set.
#[derive(Clone, Debug)]
pub struct PoolMap {
    pub stride: [u32; 4],
    pub coarse: Arc<CoordSet>,
    /// Fine row → coarse row.
    pub parent_of: Arc<Vec<u32>>,
    pub segments: Arc<Segments>,
}

fn check_stride(stride: [u32; 4]) -> Result<()> {
    if stride.iter().any(|&s| s != 1 && s != 2) {
        return Err(Error::Config(format!(
            "stride components must be 1 or 2, got {stride:?}"
        )));
    }
    Ok(())
}

pub fn pooled_dims(dims: [u32; 4], stride: [u32; 4]) -> [u32; 4] {
    [0, 1, 2, 3].map(|a| dims[a].div_ceil(stride[a]))
}

pub fn pool_coords(fine: &CoordSet, stride: [u32; 4]) -> Result<PoolMap> {
    check_stride(stride)?;
    let parent_coord = |c: [u32; 4]| [0, 1, 2, 3].map(|a| c[a] / stride[a]);
    let mut parents: Vec<[u32; 4]> = fine.coords().iter().map(|&c| parent_coord(c)).collect();
    parents.sort_unstable_by_key(|&c| canonical_key(c));
    parents.dedup();
    let coarse = CoordSet::new(parents, pooled_dims(fine.dims(), stride))?;
    let parent_of: Vec<u32> = fine
        .coords()
        .iter()
        .map(|&c| coarse.find(parent_coord(c)).expect("parent exists") as u32)
        .collect();
    let segments = Segments::from_assignment(&parent_of, coarse.len());
    Ok(PoolMap {
        stride,
        coarse: Arc::new(coarse),
        parent_of: Arc::new(parent_of),
        segments: Arc::new(segments),
    })
}

/// Average-pool onto `floor(coord / stride)`.
pub fn pool_down<T: Real>(x: &SparseTensor4D<T>, stride: [u32; 4]) -> Result<SparseTensor4D<T>> {
    let pm = pool_coords(&x.coords, stride)?;
    let features = segment_mean(&x.features, &pm.segments)?;
    SparseTensor4D::new(pm.coarse, features)
}

/// Nearest-neighbor unpooling onto `target`: each site copies its parent
/// `floor(coord / stride)`, or gets zeros if that parent is inactive.
pub fn up_sample<T: Real>(
    coarse: &SparseTensor4D<T>,
    target: Arc<CoordSet>,
    stride: [u32; 4],
) -> Result<SparseTensor4D<T>> {
    check_stride(stride)?;
    if pooled_dims(target.dims(), stride) != coarse.dims() {
        return Err(Error::shape(
            "up_sample",
            format!(
                "target dims {:?} pooled by {stride:?} do not give coarse dims {:?}",
                target.dims(),
                coarse.dims()
            ),
        ));
    }
    let index: Vec<u32> = target
        .coords()
        .iter()
        .map(|&c| {
            coarse
                .coords
                .find([0, 1, 2, 3].map(|a| c[a] / stride[a]))
                .map_or(NONE, |r| r as u32)
        })
        .collect();
    let features = gather_rows(&coarse.features, &index)?;
    SparseTensor4D::new(target, features)
}

/// Sites of one time step with the time axis dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor3D<T> {
    pub coords: Vec<[u32; 3]>,
    pub dims: [u32; 3],
    pub features: Matrix<T>,
    /// Row of each site in the 4D source tensor.
    pub source_rows: Vec<u32>,
}

impl<T> SparseTensor3D<T> {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

pub fn slice_time<T: Real>(x: &SparseTensor4D<T>, t_index: u32) -> Result<SparseTensor3D<T>> {
    let dims = x.dims();
    if t_index >= dims[3] {
        return Err(Error::shape(
            "slice_time",
            format!("t index {t_index} outside 0..{}", dims[3]),
        ));
    }
    let source_rows: Vec<u32> = x
        .coords
        .coords()
        .iter()
        .enumerate()
        .filter(|(_, c)| c[3] == t_index)
        .map(|(r, _)| r as u32)
        .collect();
    Ok(SparseTensor3D {
        coords: source_rows
            .iter()
            .map(|&r| {
                let c = x.coords.get(r as usize);
                [c[0], c[1], c[2]]
            })
            .collect(),
        dims: [dims[0], dims[1], dims[2]],
        features: gather_rows(&x.features, &source_rows)?,
        source_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{build_kernel_map_subm, KernelShape};
    use super::*;

    fn tensor(coords: Vec<[u32; 4]>, dims: [u32; 4], feats: Vec<Vec<f64>>) -> SparseTensor4D<f64> {
        SparseTensor4D::new(
            Arc::new(CoordSet::new(coords, dims).unwrap()),
            Matrix::from_rows(&feats).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_center_kernel_reproduces_input() {
        let x = tensor(
            vec![[0, 0, 0, 0], [1, 0, 0, 0], [1, 1, 0, 1]],
            [3, 3, 3, 3],
            vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 4.0]],
        );
        for shape in KernelShape::ALL {
            let k = shape.volume();
            let mut w = Matrix::zeros(k * 2, 2);
            for c in 0..2 {
                w.set(shape.center() * 2 + c, c, 1.0);
            }
            let map = build_kernel_map_subm(&x.coords, shape);
            let y = conv_subm(&x, &w, &[0.0, 0.0], &map).unwrap();
            assert_eq!(y.features, x.features);
            assert_eq!(y.coords, x.coords);
        }
    }

    #[test]
    fn isolated_site_sees_only_center_weights() {
        let x = tensor(vec![[2, 2, 2, 2]], [5, 5, 5, 5], vec![vec![1.5, -2.0]]);
        let shape = KernelShape::FULL;
        let w =
            Matrix::from_vec(81 * 2, 3, (0..81 * 6).map(|v| v as f64 * 0.01).collect()).unwrap();
        let map = build_kernel_map_subm(&x.coords, shape);
        let y = conv_subm(&x, &w, &[0.1, 0.2, 0.3], &map).unwrap();
        let c = shape.center();
        for o in 0..3 {
            let expect = [0.1, 0.2, 0.3][o] + 1.5 * w.get(c * 2, o) - 2.0 * w.get(c * 2 + 1, o);
            assert!((y.features.get(0, o) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = tensor(vec![[0, 0, 0, 0]], [1, 1, 1, 1], vec![vec![1.0, 2.0]]);
        let map = build_kernel_map_subm(&x.coords, KernelShape::POINTWISE);
        let w = Matrix::zeros(3, 4);
        assert!(conv_subm(&x, &w, &[0.0; 4], &map).is_err());
    }

    #[test]
    fn pool_singleton_and_mean() {
        let x = tensor(vec![[5, 7, 3, 2]], [8, 8, 8, 5], vec![vec![1.0, -1.0]]);
        let y = pool_down(&x, [2, 2, 2, 1]).unwrap();
        assert_eq!(y.coords.coords(), &[[2, 3, 1, 2]]);
        assert_eq!(y.features, x.features);
        assert_eq!(y.dims(), [4, 4, 4, 5]);

        let x = tensor(
            vec![[0, 0, 0, 0], [1, 1, 1, 0]],
            [2, 2, 2, 1],
            vec![vec![1.0, 4.0], vec![3.0, 0.0]],
        );
        let y = pool_down(&x, [2, 2, 2, 1]).unwrap();
        assert_eq!(y.len(), 1);
        assert_eq!(y.features.row(0), &[2.0, 2.0]);
    }

    #[test]
    fn table_one_pool_dims() {
        let x = SparseTensor4D::<f32>::empty([512, 512, 32, 5], 16);
        assert_eq!(
            pool_down(&x, [2, 2, 2, 1]).unwrap().dims(),
            [256, 256, 16, 5]
        );
        assert_eq!(
            pool_down(&x, [2, 2, 1, 1]).unwrap().dims(),
            [256, 256, 32, 5]
        );
        assert!(pool_down(&x, [3, 1, 1, 1]).is_err());
    }

    #[test]
    fn unit_stride_upsample_restricts() {
        let x = tensor(
            vec![[0, 0, 0, 0], [1, 0, 0, 0], [2, 0, 0, 0]],
            [3, 1, 1, 1],
            vec![vec![1.0], vec![2.0], vec![3.0]],
        );
        let target =
            Arc::new(CoordSet::new(vec![[2, 0, 0, 0], [0, 0, 0, 0]], [3, 1, 1, 1]).unwrap());
        let y = up_sample(&x, target, [1, 1, 1, 1]).unwrap();
        assert_eq!(y.features.as_slice(), &[3.0, 1.0]);
    }

    #[test]
    fn upsample_copies_parent_and_zero_fills_orphans() {
        let coarse = tensor(vec![[0, 0, 0, 0]], [2, 2, 2, 1], vec![vec![7.0, 8.0]]);
        let target = Arc::new(
            CoordSet::new(vec![[0, 0, 0, 0], [1, 1, 1, 0], [3, 3, 3, 0]], [4, 4, 4, 1]).unwrap(),
        );
        let y = up_sample(&coarse, target, [2, 2, 2, 1]).unwrap();
        assert_eq!(y.features.row(0), &[7.0, 8.0]);
        assert_eq!(y.features.row(1), &[7.0, 8.0]);
        assert_eq!(y.features.row(2), &[0.0, 0.0]);
        assert!(up_sample(&coarse, y.coords.clone(), [2, 2, 1, 1]).is_err());
    }

    #[test]
    fn slicing_time() {
        let x = tensor(
            vec![[0, 0, 0, 3], [1, 0, 0, 3], [1, 0, 0, 1]],
            [2, 1, 1, 5],
            vec![vec![1.0], vec![2.0], vec![3.0]],
        );
        let s = slice_time(&x, 3).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.coords, vec![[0, 0, 0], [1, 0, 0]]);
        assert_eq!(s.features.as_slice(), &[1.0, 2.0]);
        assert!(slice_time(&x, 0).unwrap().is_empty());
        assert!(slice_time(&x, 5).is_err());
    }
}
