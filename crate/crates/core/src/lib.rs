//! Adversarially robust deep reinforcement learning with interval bounds.
//!
//! The crate is organised bottom-up:
//! - [`tensor`], [`tape`]: dense `f64` tensors and reverse-mode autodiff.
//! - [`nn`], [`optim`]: dense ReLU networks with RL heads, and Adam.
//! - [`bounds`]: interval bound propagation and policy-level bounds.
//! - [`env`]: deterministic, snapshot-restorable toy environments.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod agents;
pub mod attacks;
pub mod bounds;
pub mod env;
pub mod error;
pub mod eval;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod radial;
pub mod rng;
pub mod schedule;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
