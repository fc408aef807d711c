//! Sub-interest sequential recommendation from mixed positive and
//! passive-negative feedback.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] ingests interaction logs, labels feedback, applies N-core
//!   filtering and builds leave-one-out sequences.
//! * [`synth`] plants a multi-aspect user model and emits logs in the same
//!   schema.
//! * [`diffkit`] holds the dense kernels and their hand-written backward
//!   passes, plus a finite-difference checker.
//! * [`model`] is the sub-interest encoder, projection and fusion scorer,
//!   with the SASRec degenerations.
//! * [`objective`] builds training pairs, computes the joint loss and runs
//!   the Adam training loop.
//! * [`metrics`] and [`category`] evaluate models and logs.
//! * [`cli`] wires everything into the `sine` command.

pub mod category;
pub mod cli;
pub mod config;
pub mod data;
pub mod diffkit;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod synth;

pub use error::{Error, Result};
