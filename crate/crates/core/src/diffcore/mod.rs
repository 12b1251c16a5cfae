//! Tape-based reverse-mode differentiation over flat buffers.
//!
//! A [`Tape`] records forward operations in append (topological) order and
//! sweeps them in reverse on [`Tape::backward`]. Training runs at `f32`;
//! gradient verification always runs at `f64` via [`grad_check`]. Downstream
//! modules register their own forward/adjoint pairs with [`Tape::custom`].

mod buffer;
mod checkpoint;
mod gradcheck;
mod map;
mod ops;
mod optim;
mod tape;

pub use buffer::{Buffer, Scalar};
pub use checkpoint::{checkpoint_bytes, read_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, GradCheckFailure, GradCheckReport, Program};
pub use map::{Nonlinearity, ParametricMap};
pub use optim::{Adam, OptimConfig, StepReport};
pub use tape::{BackwardCtx, BackwardFn, NodeId, ParamStore, Tape};
