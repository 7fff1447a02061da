//! Reverse-mode differentiation over the primitive set the denoiser needs.
//!
//! Model code is written once against the [`Graph`] trait. Training runs it
//! on a [`Tape`], which records every primitive in append order so that
//! [`Tape::backward`] can visit nodes in strict reverse order. Inference runs
//! the same code on an [`Eval`], which computes values and records nothing.
//!
//! Complex tensors are real tensors with a trailing `(re, im)` axis. The
//! gradient of a complex entry `z = x + iy` is stored as
//! `∂L/∂x + i ∂L/∂y`.

pub mod check;
mod graph;
pub(crate) mod kernels;
mod optim;
mod params;
mod tensor;

pub use graph::{tapes_created_on_this_thread, Eval, Gradients, Graph, Op, Tape, Var, ABS_EPS};
pub use optim::{adam_step, ema_decay, ema_update, AdamConfig, AdamState};
pub use params::{ParamKind, ParamStore};
pub use tensor::Tensor;
