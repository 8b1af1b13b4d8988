use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sparse::{
    conv_backward, conv_forward, gather_rows, scatter_rows, segment_mean, segment_mean_backward,
    KernelMap, Segments,
};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Matrix, Real};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    Gather {
        x: Var,
        index: Arc<Vec<u32>>,
    },
    SegmentMean {
        x: Var,
        segments: Arc<Segments>,
    },
    SparseConv {
        x: Var,
        w: Var,
        b: Var,
        map: Arc<KernelMap>,
    },
    /// `gamma · x̂ + beta` with `x̂ = (x - mean) · inv_std`. With batch
    /// statistics the mean and variance depend on `x` and are differentiated.
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Sum(Var),
    WeightedSum {
        x: Var,
        weights: Matrix<T>,
    },
    /// `Σ_i c_i ‖a_i − b_i‖` with `b` constant.
    WeightedDistance {
        a: Var,
        target: Matrix<T>,
        coef: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Matrix<T>,
}

/// Recorded computation. Single use: [`Tape::backward`] consumes the recording.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Adjoints for every recorded value, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the loss does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Whether each ReLU input is positive, in recording order. Two runs
    /// with different patterns sit on different sides of a kink.
    pub fn relu_signs(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.value(x).as_slice().iter().map(|&v| v > T::zero()));
            }
        }
        out
    }

    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// Adds a `1 x C` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} for input {:?}", bv.shape(), xv.shape()),
            ));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, &b) in value.row_mut(r).iter_mut().zip(bv.as_slice()) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddBias(x, bias), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(Op::Add(a, b), value))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .as_slice()
            .iter()
            .zip(self.value(b).as_slice())
            .map(|(&x, &y)| x * y)
            .collect();
        let (r, c) = self.value(a).shape();
        let value = Matrix::from_vec(r, c, data)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push(Op::Scale(x, s), value)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(Op::Relu(x), value)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::shape(
                "concat_cols",
                format!("{} rows vs {} rows", av.rows(), bv.rows()),
            ));
        }
        let cols = av.cols() + bv.cols();
        let mut data = Vec::with_capacity(av.rows() * cols);
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let value = Matrix::from_vec(av.rows(), cols, data)?;
        Ok(self.push(Op::ConcatCols(a, b), value))
    }

    /// Stack matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("{} vs {cols} columns", v.cols()),
                ));
            }
            data.extend_from_slice(v.as_slice());
            rows += v.rows();
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }

    /// Row gather; [`crate::sparse::NONE`] entries give zero rows.
    pub fn gather(&mut self, x: Var, index: Arc<Vec<u32>>) -> Result<Var> {
        let value = gather_rows(self.value(x), &index)?;
        Ok(self.push(Op::Gather { x, index }, value))
    }

    pub fn segment_mean(&mut self, x: Var, segments: Arc<Segments>) -> Result<Var> {
        let value = segment_mean(self.value(x), &segments)?;
        Ok(self.push(Op::SegmentMean { x, segments }, value))
    }

    /// Submanifold sparse convolution; `w` is `(K·C_in) x C_out`, `b` is `1 x C_out`.
    pub fn sparse_conv(&mut self, x: Var, w: Var, b: Var, map: Arc<KernelMap>) -> Result<Var> {
        let bias = self.value(b);
        if bias.rows() != 1 {
            return Err(Error::shape(
                "sparse_conv",
                format!("bias shape {:?}", bias.shape()),
            ));
        }
        let value = conv_forward(self.value(x), self.value(w), bias.as_slice(), &map)?;
        Ok(self.push(Op::SparseConv { x, w, b, map }, value))
    }

    /// Per-column normalization. With `running = None` the batch mean and
    /// biased variance are used (and returned so callers can update running
    /// averages); otherwise the given `(mean, var)` rows are used as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        running: Option<(&Matrix<T>, &Matrix<T>)>,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.shape() != (1, c) || bv.shape() != (1, c) {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "gamma {:?} beta {:?} for {c} channels",
                    gv.shape(),
                    bv.shape()
                ),
            ));
        }
        let (mean, var, stats) = match running {
            Some((m, v)) => {
                if m.shape() != (1, c) || v.shape() != (1, c) {
                    return Err(Error::shape(
                        "batch_norm",
                        "running statistics shape".to_string(),
                    ));
                }
                (m.as_slice().to_vec(), v.as_slice().to_vec(), None)
            }
            None => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                if n > 0 {
                    for r in 0..n {
                        for (m, &v) in mean.iter_mut().zip(xv.row(r)) {
                            *m += v;
                        }
                    }
                    let nf = T::lit(n as f64);
                    mean.iter_mut().for_each(|m| *m /= nf);
                    for r in 0..n {
                        for ((s, &v), &m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                            *s += (v - m) * (v - m);
                        }
                    }
                    var.iter_mut().for_each(|s| *s /= nf);
                }
                (mean.clone(), var.clone(), Some((mean, var)))
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Matrix::zeros(n, c);
        let mut value = Matrix::zeros(n, c);
        for r in 0..n {
            for j in 0..c {
                let h = (xv.get(r, j) - mean[j]) * inv_std[j];
                xhat.set(r, j, h);
                value.set(r, j, gv.as_slice()[j] * h + bv.as_slice()[j]);
            }
        }
        let batch_stats = stats.is_some();
        let var_out = self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            value,
        );
        Ok((var_out, stats))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        self.push(Op::Sum(x), value)
    }

    /// `Σ w ⊙ x` for a constant weight matrix of the same shape.
    pub fn weighted_sum(&mut self, x: Var, weights: Matrix<T>) -> Result<Var> {
        same_shape("weighted_sum", self.value(x), &weights)?;
        let s = self
            .value(x)
            .as_slice()
            .iter()
            .zip(weights.as_slice())
            .map(|(&a, &w)| a * w)
            .sum();
        Ok(self.push(Op::WeightedSum { x, weights }, Matrix::scalar(s)))
    }

    /// `Σ_i coef_i · ‖a_i − target_i‖₂` over rows.
    pub fn weighted_distance(&mut self, a: Var, target: Matrix<T>, coef: Vec<T>) -> Result<Var> {
        let av = self.value(a);
        same_shape("weighted_distance", av, &target)?;
        if coef.len() != av.rows() {
            return Err(Error::shape(
                "weighted_distance",
                format!("{} coefficients for {} rows", coef.len(), av.rows()),
            ));
        }
        let mut s = T::zero();
        for (r, &c) in coef.iter().enumerate() {
            s += c * row_distance(av.row(r), target.row(r));
        }
        Ok(self.push(Op::WeightedDistance { a, target, coef }, Matrix::scalar(s)))
    }

    /// Adjoints of every recorded value with respect to the `1 x 1` value `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let mut pending: Vec<(Var, Matrix<T>)> = Vec::with_capacity(3);
            let mut contrib = |v: Var, d: Matrix<T>| pending.push((v, d));
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    contrib(*a, matmul_nt(&g, val(*b))?);
                    contrib(*b, matmul_tn(val(*a), &g)?);
                }
                Op::AddBias(x, b) => {
                    contrib(*b, g.column_sums());
                    contrib(*x, g);
                }
                Op::Add(a, b) => {
                    contrib(*a, g.clone());
                    contrib(*b, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let ga = zip_map(&g, bv, |x, y| x * y);
                    let gb = zip_map(&g, av, |x, y| x * y);
                    contrib(*a, ga);
                    contrib(*b, gb);
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    contrib(*x, g.map(|v| v * s));
                }
                Op::Relu(x) => {
                    let gx = zip_map(
                        &g,
                        &node.value,
                        |d, y| if y > T::zero() { d } else { T::zero() },
                    );
                    contrib(*x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = val(*a).cols();
                    let cb = val(*b).cols();
                    let mut ga = Matrix::zeros(g.rows(), ca);
                    let mut gb = Matrix::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    contrib(*a, ga);
                    contrib(*b, gb);
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut start = 0;
                    for &p in parts {
                        let n = val(p).rows();
                        let d = Matrix::from_vec(
                            n,
                            cols,
                            g.as_slice()[start * cols..(start + n) * cols].to_vec(),
                        )?;
                        contrib(p, d);
                        start += n;
                    }
                }
                Op::Gather { x, index } => {
                    let n = val(*x).rows();
                    contrib(*x, scatter_rows(&g, index, n));
                }
                Op::SegmentMean { x, segments } => {
                    contrib(*x, segment_mean_backward(&g, segments));
                }
                Op::SparseConv { x, w, b, map } => {
                    let (gx, gw, gb) = conv_backward(val(*x), val(*w), map, &g);
                    contrib(*x, gx);
                    contrib(*w, gw);
                    contrib(*b, gb);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (n, c) = g.shape();
                    let gv = val(*gamma).as_slice();
                    let mut sum_g = vec![T::zero(); c];
                    let mut sum_gx = vec![T::zero(); c];
                    for r in 0..n {
                        for j in 0..c {
                            sum_g[j] += g.get(r, j);
                            sum_gx[j] += g.get(r, j) * xhat.get(r, j);
                        }
                    }
                    let mut gx = Matrix::zeros(n, c);
                    let nf = T::lit(n.max(1) as f64);
                    for r in 0..n {
                        for j in 0..c {
                            let d = if *batch_stats {
                                gv[j] * inv_std[j] / nf
                                    * (nf * g.get(r, j) - sum_g[j] - xhat.get(r, j) * sum_gx[j])
                            } else {
                                gv[j] * inv_std[j] * g.get(r, j)
                            };
                            gx.set(r, j, d);
                        }
                    }
                    contrib(*x, gx);
                    contrib(*gamma, Matrix::from_vec(1, c, sum_gx)?);
                    contrib(*beta, Matrix::from_vec(1, c, sum_g)?);
                }
                Op::Sum(x) => {
                    let (r, c) = val(*x).shape();
                    contrib(*x, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::WeightedSum { x, weights } => {
                    let s = g.get(0, 0);
                    contrib(*x, weights.map(|w| w * s));
                }
                Op::WeightedDistance { a, target, coef } => {
                    let s = g.get(0, 0);
                    let av = val(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for (r, &c) in coef.iter().enumerate() {
                        let d = row_distance(av.row(r), target.row(r));
                        if d == T::zero() {
                            continue;
                        }
                        let k = s * c / d;
                        for ((o, &p), &t) in
                            ga.row_mut(r).iter_mut().zip(av.row(r)).zip(target.row(r))
                        {
                            *o = k * (p - t);
                        }
                    }
                    contrib(*a, ga);
                }
            }
            for (v, d) in pending {
                assert!(v.0 < id, "tape is not topologically ordered");
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot => *slot = Some(d),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn row_distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

fn zip_map<T: Real>(a: &Matrix<T>, b: &Matrix<T>, f: impl Fn(T, T) -> T) -> Matrix<T> {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}
