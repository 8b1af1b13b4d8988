//! The network is written once against [`Exec`]; executors decide whether a
//! wiring step registers parameters, records tape ops, or counts FLOPs.

use rand::Rng;

use crate::autodiff::{ParamStore, Session, Var};
use crate::error::{Error, Result};
use crate::sparse::KernelShape;
use crate::tensor::Real;

use super::layers::{init_batch_norm, init_conv};
use super::plan::NetworkPlan;

pub trait Exec {
    type Feat: Clone;

    fn channels(&self, x: &Self::Feat) -> usize;
    /// Submanifold conv with parameters `{name}.weight` / `{name}.bias`.
    fn conv(
        &mut self,
        name: &str,
        x: &Self::Feat,
        shape: KernelShape,
        cout: usize,
    ) -> Result<Self::Feat>;
    fn batch_norm(&mut self, name: &str, x: &Self::Feat) -> Result<Self::Feat>;
    fn relu(&mut self, x: &Self::Feat) -> Result<Self::Feat>;
    fn add(&mut self, a: &Self::Feat, b: &Self::Feat) -> Result<Self::Feat>;
    fn concat(&mut self, a: &Self::Feat, b: &Self::Feat) -> Result<Self::Feat>;
    /// Mean-pool to the next coarser level.
    fn pool(&mut self, x: &Self::Feat, stride: [u32; 4]) -> Result<Self::Feat>;
    /// Nearest-neighbor unpool to the next finer level.
    fn up(&mut self, x: &Self::Feat, stride: [u32; 4]) -> Result<Self::Feat>;
    /// Marks the start of a stage (and block, when `Some`) for bookkeeping.
    fn begin(&mut self, _stage: usize, _block: Option<usize>) {}
}

/// Registers parameters with Kaiming-initialized weights.
pub struct InitExec<'a, T, R> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

/// `(level, channels)`.
pub type Shape = (usize, usize);

fn check_same(a: &Shape, b: &Shape, op: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::shape(
            op,
            format!("(level, channels) {a:?} vs {b:?}"),
        ));
    }
    Ok(())
}

fn finer(x: &Shape) -> Result<usize> {
    x.0.checked_sub(1)
        .ok_or_else(|| Error::Config("cannot upsample the finest level".into()))
}

impl<T: Real, R: Rng> Exec for InitExec<'_, T, R> {
    type Feat = Shape;

    fn channels(&self, x: &Shape) -> usize {
        x.1
    }

    fn conv(&mut self, name: &str, x: &Shape, shape: KernelShape, cout: usize) -> Result<Shape> {
        init_conv(self.store, name, shape.volume(), x.1, cout, self.rng)?;
        Ok((x.0, cout))
    }

    fn batch_norm(&mut self, name: &str, x: &Shape) -> Result<Shape> {
        init_batch_norm(self.store, name, x.1)?;
        Ok(*x)
    }

    fn relu(&mut self, x: &Shape) -> Result<Shape> {
        Ok(*x)
    }

    fn add(&mut self, a: &Shape, b: &Shape) -> Result<Shape> {
        check_same(a, b, "add")?;
        Ok(*a)
    }

    fn concat(&mut self, a: &Shape, b: &Shape) -> Result<Shape> {
        if a.0 != b.0 {
            return Err(Error::shape("concat", format!("levels {} vs {}", a.0, b.0)));
        }
        Ok((a.0, a.1 + b.1))
    }

    fn pool(&mut self, x: &Shape, _stride: [u32; 4]) -> Result<Shape> {
        Ok((x.0 + 1, x.1))
    }

    fn up(&mut self, x: &Shape, _stride: [u32; 4]) -> Result<Shape> {
        Ok((finer(x)?, x.1))
    }
}

/// Runs the wiring on a tape.
pub struct TapeExec<'s, 'p, T> {
    pub session: &'s mut Session<'p, T>,
    pub plan: &'s NetworkPlan,
}

impl<T: Real> Exec for TapeExec<'_, '_, T> {
    /// `(value, level)`.
    type Feat = (Var, usize);

    fn channels(&self, x: &Self::Feat) -> usize {
        self.session.value(x.0).cols()
    }

    fn conv(
        &mut self,
        name: &str,
        x: &Self::Feat,
        shape: KernelShape,
        cout: usize,
    ) -> Result<Self::Feat> {
        let map = self.plan.level(x.1).kernel_map(shape);
        let y = self.session.sparse_conv(x.0, name, map)?;
        let got = self.session.value(y).cols();
        if got != cout {
            return Err(Error::shape(
                "conv",
                format!("{name} produces {got} channels, wiring expects {cout}"),
            ));
        }
        Ok((y, x.1))
    }

    fn batch_norm(&mut self, name: &str, x: &Self::Feat) -> Result<Self::Feat> {
        Ok((self.session.batch_norm(x.0, name)?, x.1))
    }

    fn relu(&mut self, x: &Self::Feat) -> Result<Self::Feat> {
        Ok((self.session.relu(x.0), x.1))
    }

    fn add(&mut self, a: &Self::Feat, b: &Self::Feat) -> Result<Self::Feat> {
        if a.1 != b.1 {
            return Err(Error::shape("add", format!("levels {} vs {}", a.1, b.1)));
        }
        Ok((self.session.add(a.0, b.0)?, a.1))
    }

    fn concat(&mut self, a: &Self::Feat, b: &Self::Feat) -> Result<Self::Feat> {
        if a.1 != b.1 {
            return Err(Error::shape("concat", format!("levels {} vs {}", a.1, b.1)));
        }
        Ok((self.session.concat_cols(a.0, b.0)?, a.1))
    }

    fn pool(&mut self, x: &Self::Feat, stride: [u32; 4]) -> Result<Self::Feat> {
        let pm = self.plan.pool_map(x.1 + 1, stride)?;
        Ok((
            self.session.segment_mean(x.0, pm.segments.clone())?,
            x.1 + 1,
        ))
    }

    fn up(&mut self, x: &Self::Feat, stride: [u32; 4]) -> Result<Self::Feat> {
        let pm = self.plan.pool_map(x.1, stride)?;
        Ok((
            self.session.gather(x.0, pm.parent_of.clone())?,
            finer(&(x.1, 0))?,
        ))
    }
}
