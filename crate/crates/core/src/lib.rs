//! Task-cued neuron gating for feedforward classifiers.
//!
//! A base network is trained once on every class. Afterwards, each category of
//! classes (for CIFAR-10: vehicles and animals) gets its own vector of gate
//! biases per hidden layer; the base weights stay frozen. At inference an
//! external cue picks which gate vectors modulate the hidden activations.
//!
//! Modules, bottom up:
//!
//! - [`ndcore`]: tensors and seeded random streams
//! - [`data`]: CIFAR-10 loading, preprocessing, splits and batching
//! - [`nn`]: layers, gate bank, forward and backward passes
//! - [`optim`]: NLL loss, RMSprop and the finite-difference gradient checker
//! - [`train`]: base training and per-category gate training
//! - [`eval`]: cued evaluation, categorical isolation, confusion matrices and
//!   gate exports
//! - [`persist`]: checkpoint files
//! - [`cli`]: the `gatenet` command line

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod ndcore;
pub mod nn;
pub mod optim;
pub mod persist;
pub mod train;

pub use error::{Error, Result};
