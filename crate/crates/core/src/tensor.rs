//! Row-major dense matrices and the scalar trait shared by every kernel.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::sync::atomic::{AtomicUsize, Ordering};

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type. Training runs in `f32`; gradient checks in `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `C ← α·A·B + β·C` for strided `m x k` A, `k x n` B, `m x n` C.
    ///
    /// # Safety
    /// Every strided element of the three operands must be in bounds.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (*const Self, isize, isize),
        b: (*const Self, isize, isize),
        beta: Self,
        c: (*mut Self, isize, isize),
    );
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: (*const f32, isize, isize),
        b: (*const f32, isize, isize),
        beta: f32,
        c: (*mut f32, isize, isize),
    ) {
        matrixmultiply::sgemm(
            m, k, n, alpha, a.0, a.1, a.2, b.0, b.1, b.2, beta, c.0, c.1, c.2,
        );
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: (*const f64, isize, isize),
        b: (*const f64, isize, isize),
        beta: f64,
        c: (*mut f64, isize, isize),
    ) {
        matrixmultiply::dgemm(
            m, k, n, alpha, a.0, a.1, a.2, b.0, b.1, b.2, beta, c.0, c.1, c.2,
        );
    }
}

/// Row and column stride of a matrix view.
pub type Strides = (usize, usize);

fn view_fits(len: usize, rows: usize, cols: usize, (rs, cs): Strides) -> bool {
    rows == 0 || cols == 0 || (rows - 1) * rs + (cols - 1) * cs < len
}

static THREADS: AtomicUsize = AtomicUsize::new(1);

/// Caps the worker threads used by large matrix products (default 1).
pub fn set_num_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn num_threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// Rows per parallel work item. A multiple of every GEMM row-block size, so
/// each row sees the same kernel tiling, and hence the same rounding, for any
/// thread count.
const ROW_CHUNK: usize = 256;

struct SendPtr<T>(*const T);
struct SendMut<T>(*mut T);
// SAFETY: the pointers are only dereferenced inside `gemm`, where every
// worker writes a disjoint set of rows of C and reads A and B.
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}
unsafe impl<T> Send for SendMut<T> {}
unsafe impl<T> Sync for SendMut<T> {}

/// Bounds-checked `C ← A·B + β·C` over strided views.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    beta: T,
    c: &mut [T],
    sc: Strides,
) {
    assert!(
        view_fits(a.len(), m, k, sa)
            && view_fits(b.len(), k, n, sb)
            && view_fits(c.len(), m, n, sc)
    );
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for r in 0..m {
            for col in 0..n {
                c[r * sc.0 + col * sc.1] *= beta;
            }
        }
        return;
    }
    let chunks = m.div_ceil(ROW_CHUNK);
    let threads = num_threads().min(chunks);
    if threads > 1 {
        let (pa, pb, pc) = (SendPtr(a.as_ptr()), SendPtr(b.as_ptr()), SendMut(c.as_mut_ptr()));
        let (pa, pb, pc) = (&pa, &pb, &pc);
        std::thread::scope(|scope| {
            for w in 0..threads {
                scope.spawn(move || {
                    for chunk in (w..chunks).step_by(threads) {
                        let r0 = chunk * ROW_CHUNK;
                        let rows = ROW_CHUNK.min(m - r0);
                        // SAFETY: rows r0..r0+rows of A and C are in bounds by the
                        // asserts above, and no other worker touches these rows of C.
                        unsafe {
                            T::gemm_raw(
                                rows,
                                k,
                                n,
                                T::one(),
                                (pa.0.add(r0 * sa.0), sa.0 as isize, sa.1 as isize),
                                (pb.0, sb.0 as isize, sb.1 as isize),
                                beta,
                                (pc.0.add(r0 * sc.0), sc.0 as isize, sc.1 as isize),
                            );
                        }
                    }
                });
            }
        });
        return;
    }
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is exclusively borrowed.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            (a.as_ptr(), sa.0 as isize, sa.1 as isize),
            (b.as_ptr(), sb.0 as isize, sb.1 as isize),
            beta,
            (c.as_mut_ptr(), sc.0 as isize, sc.1 as isize),
        );
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} elements for {rows}x{cols}", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn scalar(value: T) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    /// Sum of all elements, accumulated in index order.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64(v.as_f64()).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    /// Select rows by index.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// `a · b`.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(
        a.rows,
        a.cols,
        b.cols,
        &a.data,
        (a.cols, 1),
        &b.data,
        (b.cols, 1),
        T::zero(),
        &mut out.data,
        (b.cols, 1),
    );
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows != b.rows {
        return Err(Error::shape(
            "matmul_tn",
            format!("{:?}ᵀ x {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    gemm(
        a.cols,
        a.rows,
        b.cols,
        &a.data,
        (1, a.cols),
        &b.data,
        (b.cols, 1),
        T::zero(),
        &mut out.data,
        (b.cols, 1),
    );
    Ok(out)
}

/// `a · bᵀ`.
pub fn matmul_nt<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_nt",
            format!("{:?} x {:?}ᵀ", a.shape(), b.shape()),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    gemm(
        a.rows,
        a.cols,
        b.rows,
        &a.data,
        (a.cols, 1),
        &b.data,
        (1, b.cols),
        T::zero(),
        &mut out.data,
        (b.rows, 1),
    );
    Ok(out)
}

impl<T: Real> Matrix<T> {
    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Column sums as a `1 x cols` row.
    pub fn column_sums(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }
}

impl<T: Real> Default for Matrix<T> {
    fn default() -> Self {
        Self::zeros(0, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                out.set(i, j, (0..a.cols()).map(|p| a.get(i, p) * b.get(p, j)).sum());
            }
        }
        out
    }

    fn seq(rows: usize, cols: usize, s: f64) -> Matrix<f64> {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|i| ((i as f64 + s) * 0.37).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let (a, b) = (seq(1111, 37, 0.0).cast::<f32>(), seq(37, 45, 3.0).cast::<f32>());
        let run = |threads| {
            set_num_threads(threads);
            let mut c = seq(1111, 45, 1.0).cast::<f32>();
            gemm(1111, 37, 45, a.as_slice(), (37, 1), b.as_slice(), (45, 1), 1.0, c.as_mut_slice(), (45, 1));
            c
        };
        let one = run(1);
        for t in [2, 3, 8] {
            assert_eq!(run(t), one, "{t} threads");
        }
        set_num_threads(1);
    }

    #[test]
    fn products_match_naive() {
        let a = seq(7, 5, 0.0);
        let b = seq(5, 3, 1.0);
        assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
        let at = a.transpose();
        assert!(matmul_tn(&at, &b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
        let bt = b.transpose();
        assert!(matmul_nt(&a, &bt).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
        assert!(matmul(&a, &a).is_err());
    }

    #[test]
    fn empty_inner_dimension() {
        let a = Matrix::<f64>::zeros(3, 0);
        let b = Matrix::<f64>::zeros(0, 2);
        assert_eq!(matmul(&a, &b).unwrap(), Matrix::zeros(3, 2));
    }
}
