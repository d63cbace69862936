//! The gated feedforward classifier.
//!
//! A gate attenuates a hidden activation `a` by `σ(b)`, where the bias `b`
//! belongs to the currently selected task and does not depend on the input.
//! Gates sit after every hidden ReLU; each task owns one bias vector per
//! hidden layer.

mod layers;
mod network;
mod params;

pub use layers::{
    dropout, gate_backward, gate_forward, log_softmax, log_softmax_backward, predict, relu,
    relu_backward, sigmoid, Mode,
};
pub use network::{backward, forward, ForwardTrace, Gates, GradTargets, Gradients};
pub use params::{BaseParams, DenseLayer, GateBank, MlpConfig};
