use std::sync::Arc;

use rustc_hash::FxHashMap;

use super::params::{ParamKind, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::sparse::{KernelMap, Segments};
use crate::tensor::{Matrix, Real};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// One forward (and optionally backward) pass over a parameter store.
///
/// Parameters are bound lazily by name the first time they are used. In
/// training mode BatchNorm normalizes with batch statistics and queues
/// running-average updates; in evaluation mode it reads the running buffers.
pub struct Session<'p, T> {
    pub tape: Tape<T>,
    store: &'p ParamStore<T>,
    bound: FxHashMap<String, Var>,
    train: bool,
    bn_updates: Vec<(String, Matrix<T>)>,
}

/// Result of [`Session::finish`]: loss value, parameter gradients and buffer updates.
#[derive(Debug)]
pub struct StepOutcome<T> {
    pub loss: T,
    pub grads: Vec<(String, Matrix<T>)>,
    pub buffer_updates: Vec<(String, Matrix<T>)>,
}

impl<T: Real> StepOutcome<T> {
    /// Accumulate gradients into `store` and write the buffer updates.
    pub fn apply(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.accumulate(self.grads.iter().map(|(n, g)| (n.as_str(), g)))?;
        for (name, value) in &self.buffer_updates {
            store.set(name, value.clone())?;
        }
        Ok(())
    }
}

impl<'p, T: Real> Session<'p, T> {
    pub fn new(store: &'p ParamStore<T>, train: bool) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: FxHashMap::default(),
            train,
            bn_updates: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        self.tape.value(v)
    }

    pub fn input(&mut self, value: Matrix<T>) -> Var {
        self.tape.leaf(value)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        if self.store.kind(name)? != ParamKind::Param {
            return Err(Error::UnknownParam(format!("{name} is not trainable")));
        }
        let v = self.tape.leaf(self.store.get(name)?.clone());
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// `x · W + b` with parameters `{prefix}.weight` and `{prefix}.bias`.
    pub fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        if self.value(x).cols() != self.value(w).rows() {
            return Err(Error::shape(
                "linear",
                format!(
                    "{prefix}: input has {} channels, weight expects {}",
                    self.value(x).cols(),
                    self.value(w).rows()
                ),
            ));
        }
        let y = self.tape.matmul(x, w)?;
        self.tape.add_bias(y, b)
    }

    pub fn sparse_conv(&mut self, x: Var, prefix: &str, map: Arc<KernelMap>) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        let k = map.volume();
        let (cin, wrows) = (self.value(x).cols(), self.value(w).rows());
        if wrows != k * cin {
            return Err(Error::shape(
                "sparse_conv",
                format!(
                    "{prefix}: input has {cin} channels, weight has {wrows} rows for {k} offsets"
                ),
            ));
        }
        self.tape.sparse_conv(x, w, b, map)
    }

    /// BatchNorm with `{prefix}.gamma/.beta` and buffers `{prefix}.running_mean/.running_var`.
    pub fn batch_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let mean_name = format!("{prefix}.running_mean");
        let var_name = format!("{prefix}.running_var");
        let eps = T::lit(BN_EPS);
        if !self.train {
            let store = self.store;
            let running = (store.get(&mean_name)?, store.get(&var_name)?);
            return Ok(self.tape.batch_norm(x, gamma, beta, eps, Some(running))?.0);
        }
        let rows = self.value(x).rows();
        let (y, stats) = self.tape.batch_norm(x, gamma, beta, eps, None)?;
        if rows > 0 {
            let (mean, var) = stats.expect("batch statistics");
            // running variance tracks the unbiased estimate
            let unbias = if rows > 1 {
                T::lit(rows as f64 / (rows as f64 - 1.0))
            } else {
                T::one()
            };
            let mom = T::lit(BN_MOMENTUM);
            let blend = |old: &Matrix<T>, new: &[T], scale: T| {
                let data = old
                    .as_slice()
                    .iter()
                    .zip(new)
                    .map(|(&o, &n)| (T::one() - mom) * o + mom * n * scale)
                    .collect();
                Matrix::from_vec(1, new.len(), data).expect("row")
            };
            let rm = blend(self.latest(&mean_name)?, &mean, T::one());
            let rv = blend(self.latest(&var_name)?, &var, unbias);
            self.bn_updates.push((mean_name, rm));
            self.bn_updates.push((var_name, rv));
        }
        Ok(y)
    }

    fn latest(&self, name: &str) -> Result<&Matrix<T>> {
        match self.bn_updates.iter().rev().find(|(n, _)| n == name) {
            Some((_, m)) => Ok(m),
            None => self.store.get(name),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.tape.relu(x)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.tape.add(a, b)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.tape.concat_cols(a, b)
    }

    pub fn gather(&mut self, x: Var, index: Arc<Vec<u32>>) -> Result<Var> {
        self.tape.gather(x, index)
    }

    pub fn segment_mean(&mut self, x: Var, segments: Arc<Segments>) -> Result<Var> {
        self.tape.segment_mean(x, segments)
    }

    /// Buffer updates queued so far, without running backward.
    pub fn into_buffer_updates(self) -> Vec<(String, Matrix<T>)> {
        self.bn_updates
    }

    /// Backpropagate from `loss` and collect gradients of every bound parameter.
    pub fn finish(mut self, loss: Var) -> Result<StepOutcome<T>> {
        let loss_value = self.value(loss).clone();
        let mut grads = self.tape.backward(loss)?;
        if loss_value.shape() != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: loss_value.rows(),
                cols: loss_value.cols(),
            });
        }
        let mut bound: Vec<(String, Var)> = self.bound.into_iter().collect();
        bound.sort_by_key(|(_, v)| v.0);
        let grads = bound
            .into_iter()
            .filter_map(|(name, v)| grads.take(v).map(|g| (name, g)))
            .collect();
        Ok(StepOutcome {
            loss: loss_value.get(0, 0),
            grads,
            buffer_updates: self.bn_updates,
        })
    }
}
