//! Reverse-mode differentiation over the operations the network uses.
//!
//! A [`Tape`] records every op of one forward pass together with its output
//! value; [`Tape::backward`] walks it once in reverse. Named parameters live in
//! a [`ParamStore`], which also carries Adam moments and BatchNorm running
//! statistics. A [`Session`] binds a store to a fresh tape for one step.

mod checkpoint;
mod gradcheck;
mod params;
mod session;
mod tape;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, TensorEntry, CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use params::{AdamConfig, ParamKind, ParamStore};
pub use session::{Session, StepOutcome, BN_EPS, BN_MOMENTUM};
pub use tape::{Gradients, Tape, Var};
