//! Dense reference implementations for tests.
//!
//! Deliberately naive nested loops over a fully materialized grid, sharing no
//! code with the sparse engine beyond the weight layout convention: kernel
//! offsets are enumerated with `w` slowest and `t` fastest, and weights are
//! stored as `(K·C_in) x C_out`. Offset `δ` gathers from `p − δ`.

use std::sync::Arc;

use crate::autodiff::{ParamStore, BN_EPS};
use crate::error::{Error, Result};
use crate::nn::{BlockConfig, BlockKind};
use crate::sparse::{CoordSet, KernelShape, SparseTensor4D};
use crate::tensor::{Matrix, Real};

pub const MAX_ORACLE_DIMS: [usize; 4] = [16, 16, 16, 8];

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor4D<T> {
    pub dims: [usize; 4],
    pub channels: usize,
    /// `((((w·L + l)·H + h)·T + t)·C + c)`.
    pub data: Vec<T>,
    pub mask: Vec<bool>,
}

impl<T: Real> DenseTensor4D<T> {
    pub fn zeros(dims: [usize; 4], channels: usize) -> Result<Self> {
        if dims.iter().zip(MAX_ORACLE_DIMS).any(|(&d, m)| d > m) {
            return Err(Error::OracleTooLarge(dims));
        }
        let sites = dims.iter().product::<usize>();
        Ok(Self {
            dims,
            channels,
            data: vec![T::zero(); sites * channels],
            mask: vec![false; sites],
        })
    }

    pub fn site(&self, p: [usize; 4]) -> usize {
        ((p[0] * self.dims[1] + p[1]) * self.dims[2] + p[2]) * self.dims[3] + p[3]
    }

    pub fn num_sites(&self) -> usize {
        self.mask.len()
    }

    pub fn position(&self, site: usize) -> [usize; 4] {
        let d = self.dims;
        [
            site / (d[1] * d[2] * d[3]),
            site / (d[2] * d[3]) % d[1],
            site / d[3] % d[2],
            site % d[3],
        ]
    }

    pub fn get(&self, site: usize, c: usize) -> T {
        self.data[site * self.channels + c]
    }

    pub fn set(&mut self, site: usize, c: usize, v: T) {
        self.data[site * self.channels + c] = v;
    }

    pub fn occupied(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn to_dense<T: Real>(x: &SparseTensor4D<T>) -> Result<DenseTensor4D<T>> {
    let dims = x.dims().map(|d| d as usize);
    let mut out = DenseTensor4D::zeros(dims, x.channels())?;
    for (r, c) in x.coords.coords().iter().enumerate() {
        let s = out.site(c.map(|v| v as usize));
        out.mask[s] = true;
        for ch in 0..x.channels() {
            out.set(s, ch, x.features.get(r, ch));
        }
    }
    Ok(out)
}

/// Occupied sites in `(t, h, l, w)` order.
pub fn from_dense<T: Real>(x: &DenseTensor4D<T>) -> Result<SparseTensor4D<T>> {
    let d = x.dims;
    let mut coords = Vec::new();
    let mut data = Vec::new();
    for t in 0..d[3] {
        for h in 0..d[2] {
            for l in 0..d[1] {
                for w in 0..d[0] {
                    let s = x.site([w, l, h, t]);
                    if x.mask[s] {
                        coords.push([w as u32, l as u32, h as u32, t as u32]);
                        data.extend_from_slice(&x.data[s * x.channels..(s + 1) * x.channels]);
                    }
                }
            }
        }
    }
    let features = Matrix::from_vec(coords.len(), x.channels, data)?;
    let dims = d.map(|v| v as u32);
    SparseTensor4D::new(Arc::new(CoordSet::new(coords, dims)?), features)
}

/// Zero-padded 4D convolution. With `submanifold` the output exists only on
/// the input's occupied sites and unoccupied neighbors contribute nothing;
/// otherwise every site is computed and marked occupied.
pub fn dense_conv4d<T: Real>(
    x: &DenseTensor4D<T>,
    weights: &Matrix<T>,
    bias: &[T],
    kernel: KernelShape,
    submanifold: bool,
) -> Result<DenseTensor4D<T>> {
    let e = kernel.extent().map(|v| v as i64);
    let r = e.map(|v| v / 2);
    let volume = (e[0] * e[1] * e[2] * e[3]) as usize;
    let (cin, cout) = (x.channels, weights.cols());
    if weights.rows() != volume * cin || bias.len() != cout {
        return Err(Error::shape(
            "dense_conv4d",
            format!(
                "weights {:?} / bias {} for {volume} offsets x {cin} channels",
                weights.shape(),
                bias.len()
            ),
        ));
    }
    let mut out = DenseTensor4D::zeros(x.dims, cout)?;
    let d = x.dims.map(|v| v as i64);
    for site in 0..x.num_sites() {
        if submanifold && !x.mask[site] {
            continue;
        }
        let p = x.position(site).map(|v| v as i64);
        out.mask[site] = true;
        for (o, &b) in bias.iter().enumerate().take(cout) {
            let mut acc = b;
            let mut k = 0;
            for dw in -r[0]..=r[0] {
                for dl in -r[1]..=r[1] {
                    for dh in -r[2]..=r[2] {
                        for dt in -r[3]..=r[3] {
                            let q = [p[0] - dw, p[1] - dl, p[2] - dh, p[3] - dt];
                            let inside = (0..4).all(|a| q[a] >= 0 && q[a] < d[a]);
                            if inside {
                                let qs = x.site(q.map(|v| v as usize));
                                if !submanifold || x.mask[qs] {
                                    for c in 0..cin {
                                        acc += x.get(qs, c) * weights.get(k * cin + c, o);
                                    }
                                }
                            }
                            k += 1;
                        }
                    }
                }
            }
            out.set(site, o, acc);
        }
    }
    Ok(out)
}

/// For each kernel offset, every `(in_row, out_row)` with `coords[out] − δ = coords[in]`,
/// found by comparing all pairs of sites.
pub fn brute_force_pairs(coords: &[[u32; 4]], kernel: KernelShape) -> Vec<Vec<(usize, usize)>> {
    let e = kernel.extent().map(|v| v as i64);
    let r = e.map(|v| v / 2);
    let mut out = vec![Vec::new(); (e[0] * e[1] * e[2] * e[3]) as usize];
    for (j, cj) in coords.iter().enumerate() {
        for (i, ci) in coords.iter().enumerate() {
            let delta: Vec<i64> = (0..4).map(|a| cj[a] as i64 - ci[a] as i64).collect();
            if (0..4).any(|a| delta[a].abs() > r[a]) {
                continue;
            }
            let k = (((delta[0] + r[0]) * e[1] + delta[1] + r[1]) * e[2] + delta[2] + r[2]) * e[3]
                + delta[3]
                + r[3];
            out[k as usize].push((i, j));
        }
    }
    out
}

fn map_occupied<T: Real>(x: &DenseTensor4D<T>, f: impl Fn(T) -> T) -> DenseTensor4D<T> {
    let mut out = x.clone();
    for s in 0..x.num_sites() {
        for c in 0..x.channels {
            let v = if x.mask[s] { f(x.get(s, c)) } else { T::zero() };
            out.set(s, c, v);
        }
    }
    out
}

pub fn dense_relu<T: Real>(x: &DenseTensor4D<T>) -> DenseTensor4D<T> {
    map_occupied(x, |v| v.max(T::zero()))
}

pub fn dense_add<T: Real>(a: &DenseTensor4D<T>, b: &DenseTensor4D<T>) -> Result<DenseTensor4D<T>> {
    if a.dims != b.dims || a.channels != b.channels || a.mask != b.mask {
        return Err(Error::shape(
            "dense_add",
            "operands differ in shape or occupancy",
        ));
    }
    let mut out = a.clone();
    for (o, &v) in out.data.iter_mut().zip(&b.data) {
        *o += v;
    }
    Ok(out)
}

/// BatchNorm over occupied sites: batch mean and biased variance when
/// `train`, the running buffers otherwise.
pub fn dense_batch_norm<T: Real>(
    x: &DenseTensor4D<T>,
    params: &ParamStore<T>,
    prefix: &str,
    train: bool,
) -> Result<DenseTensor4D<T>> {
    let gamma = params.get(&format!("{prefix}.gamma"))?;
    let beta = params.get(&format!("{prefix}.beta"))?;
    let mut out = x.clone();
    let n = x.occupied();
    for c in 0..x.channels {
        let (mean, var) = if train {
            let vals: Vec<T> = (0..x.num_sites())
                .filter(|&s| x.mask[s])
                .map(|s| x.get(s, c))
                .collect();
            let nf = T::lit(n.max(1) as f64);
            let m = vals.iter().copied().sum::<T>() / nf;
            let v = vals.iter().map(|&a| (a - m) * (a - m)).sum::<T>() / nf;
            (m, v)
        } else {
            (
                params.get(&format!("{prefix}.running_mean"))?.get(0, c),
                params.get(&format!("{prefix}.running_var"))?.get(0, c),
            )
        };
        let denom = (var + T::lit(BN_EPS)).sqrt();
        for s in 0..x.num_sites() {
            if x.mask[s] {
                out.set(
                    s,
                    c,
                    gamma.get(0, c) * (x.get(s, c) - mean) / denom + beta.get(0, c),
                );
            }
        }
    }
    Ok(out)
}

fn dense_conv_named<T: Real>(
    x: &DenseTensor4D<T>,
    params: &ParamStore<T>,
    name: &str,
    kernel: KernelShape,
) -> Result<DenseTensor4D<T>> {
    let w = params.get(&format!("{name}.weight"))?;
    let b = params.get(&format!("{name}.bias"))?;
    dense_conv4d(x, w, b.as_slice(), kernel, true)
}

fn dense_cbr<T: Real>(
    x: &DenseTensor4D<T>,
    params: &ParamStore<T>,
    name: &str,
    kernel: KernelShape,
    train: bool,
) -> Result<DenseTensor4D<T>> {
    let y = dense_conv_named(x, params, name, kernel)?;
    let y = dense_batch_norm(&y, params, &format!("{name}.bn"), train)?;
    Ok(dense_relu(&y))
}

/// The residual block wiring re-stated on dense tensors, reading the same
/// parameter names as the sparse network.
pub fn dense_block<T: Real>(
    x: &DenseTensor4D<T>,
    cfg: &BlockConfig,
    params: &ParamStore<T>,
    prefix: &str,
    train: bool,
) -> Result<DenseTensor4D<T>> {
    if x.channels != cfg.in_ch {
        return Err(Error::shape(
            "dense_block",
            format!("{} channels, expected {}", x.channels, cfg.in_ch),
        ));
    }
    let n = |s: &str| format!("{prefix}.{s}");
    let (sp, tm, pw, full) = (
        KernelShape::SPATIAL,
        KernelShape::TEMPORAL,
        KernelShape::POINTWISE,
        KernelShape::FULL,
    );
    let branch = match cfg.kind {
        BlockKind::Conv4d => {
            let a = dense_cbr(x, params, &n("c1"), full, train)?;
            dense_cbr(&a, params, &n("c2"), full, train)?
        }
        BlockKind::StdbB => {
            let a = dense_cbr(x, params, &n("s1"), sp, train)?;
            let a = dense_cbr(&a, params, &n("t1"), tm, train)?;
            let a = dense_cbr(&a, params, &n("s2"), sp, train)?;
            dense_cbr(&a, params, &n("t2"), tm, train)?
        }
        BlockKind::StdbP => {
            let s1 = dense_cbr(x, params, &n("set1.s"), sp, train)?;
            let t1 = dense_cbr(x, params, &n("set1.t"), tm, train)?;
            let f1 = dense_cbr(&dense_add(&s1, &t1)?, params, &n("set1.f"), pw, train)?;
            let s2 = dense_cbr(&f1, params, &n("set2.s"), sp, train)?;
            let t2 = dense_cbr(&f1, params, &n("set2.t"), tm, train)?;
            dense_cbr(&dense_add(&s2, &t2)?, params, &n("set2.f"), pw, train)?
        }
        BlockKind::StdbD => {
            let a = dense_cbr(x, params, &n("a.s"), sp, train)?;
            let a = dense_cbr(&a, params, &n("a.t"), tm, train)?;
            let b = dense_cbr(x, params, &n("b.t"), tm, train)?;
            let b = dense_cbr(&b, params, &n("b.s"), sp, train)?;
            dense_cbr(&dense_add(&a, &b)?, params, &n("f"), pw, train)?
        }
    };
    let residual = if cfg.in_ch != cfg.set2_ch {
        dense_conv_named(x, params, &n("proj"), pw)?
    } else {
        x.clone()
    };
    Ok(dense_relu(&dense_add(&branch, &residual)?))
}
