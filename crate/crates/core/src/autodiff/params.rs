use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Trained by the optimizer.
    Param,
    /// State that is saved but never differentiated (BatchNorm running statistics).
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr >= 0.0 && self.lr.is_finite())
            || !unit(self.beta1)
            || !unit(self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Entry<T> {
    value: Matrix<T>,
    grad: Option<Matrix<T>>,
    m: Matrix<T>,
    v: Matrix<T>,
    kind: ParamKind,
}

/// Named tensors in insertion order, with gradient slots and Adam moments.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Entry<T>>,
    step: u64,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
            step: 0,
        }
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        value: Matrix<T>,
        kind: ParamKind,
    ) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let (r, c) = value.shape();
        self.entries.insert(
            name,
            Entry {
                value,
                grad: None,
                m: Matrix::zeros(r, c),
                v: Matrix::zeros(r, c),
                kind,
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<T>, ParamKind)> {
        self.entries
            .iter()
            .map(|(n, e)| (n.as_str(), &e.value, e.kind))
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.kind == ParamKind::Param)
            .map(|e| e.value.len())
            .sum()
    }

    fn entry(&self, name: &str) -> Result<&Entry<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    fn entry_mut(&mut self, name: &str) -> Result<&mut Entry<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Matrix<T>> {
        Ok(&self.entry(name)?.value)
    }

    pub fn kind(&self, name: &str) -> Result<ParamKind> {
        Ok(self.entry(name)?.kind)
    }

    /// Replace a tensor's value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Matrix<T>) -> Result<()> {
        let e = self.entry_mut(name)?;
        if e.value.shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set",
                format!("{name}: {:?} -> {:?}", e.value.shape(), value.shape()),
            ));
        }
        e.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Matrix<T>> {
        Ok(&mut self.entry_mut(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<Option<&Matrix<T>>> {
        Ok(self.entry(name)?.grad.as_ref())
    }

    /// Add gradients into the slots. Every trainable parameter ends up with a
    /// gradient; parameters absent from `grads` receive zeros.
    pub fn accumulate<'a>(
        &mut self,
        grads: impl IntoIterator<Item = (&'a str, &'a Matrix<T>)>,
    ) -> Result<()> {
        for (name, g) in grads {
            let e = self.entry_mut(name)?;
            if e.kind != ParamKind::Param {
                return Err(Error::shape("accumulate", format!("{name} is a buffer")));
            }
            if g.shape() != e.value.shape() {
                return Err(Error::shape(
                    "accumulate",
                    format!(
                        "{name}: gradient {:?} for value {:?}",
                        g.shape(),
                        e.value.shape()
                    ),
                ));
            }
            match &mut e.grad {
                Some(acc) => acc.add_assign(g),
                slot => *slot = Some(g.clone()),
            }
        }
        for e in self.entries.values_mut() {
            if e.kind == ParamKind::Param && e.grad.is_none() {
                let (r, c) = e.value.shape();
                e.grad = Some(Matrix::zeros(r, c));
            }
        }
        Ok(())
    }

    pub fn scale_grads(&mut self, s: T) {
        for g in self.entries.values_mut().filter_map(|e| e.grad.as_mut()) {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn clear_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad = None;
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.entries
            .values()
            .all(|e| e.grad.as_ref().is_none_or(|g| g.all_finite()))
    }

    /// One bias-corrected Adam update of every trainable parameter, then clears gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        cfg.validate()?;
        if let Some((name, _)) = self
            .entries
            .iter()
            .find(|(_, e)| e.kind == ParamKind::Param && e.grad.is_none())
        {
            return Err(Error::MissingGradient(name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lit = T::lit;
        for e in self
            .entries
            .values_mut()
            .filter(|e| e.kind == ParamKind::Param)
        {
            let g = e.grad.take().expect("checked above");
            let p = e.value.as_mut_slice();
            let (m, v) = (e.m.as_mut_slice(), e.v.as_mut_slice());
            for i in 0..p.len() {
                let gi = g.as_slice()[i];
                m[i] = lit(b1) * m[i] + lit(1.0 - b1) * gi;
                v[i] = lit(b2) * v[i] + lit(1.0 - b2) * gi * gi;
                if cfg.lr == 0.0 {
                    continue;
                }
                let mhat = m[i] / lit(c1);
                let vhat = v[i] / lit(c2);
                p[i] -= lit(cfg.lr) * mhat / (vhat.sqrt() + lit(cfg.eps));
            }
        }
        Ok(())
    }

    /// Same tensors in another precision; moments and gradients are dropped.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, e) in &self.entries {
            out.insert(name.clone(), e.value.cast(), e.kind)
                .expect("unique names");
        }
        out.step = self.step;
        out
    }
}
