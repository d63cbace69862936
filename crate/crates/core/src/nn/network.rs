//! Forward and reverse passes of the gated classifier.
//!
//! Each hidden layer computes dense → ReLU → gate → dropout; the output layer
//! is dense → log-softmax. Without gates the gate step is skipped, which is
//! the same as a gate factor of exactly one.

use super::layers::{
    dropout, gate_backward, log_softmax, log_softmax_backward, relu, relu_backward, scale_columns,
    sigmoid, Mode,
};
use super::params::{BaseParams, DenseLayer, GateBank};
use crate::error::{Error, Result};
use crate::ndcore::{matmul, matmul_nt, matmul_tn, Real, RngStream, Tensor};

/// Gate biases selected for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Gates<'a, T = f32> {
    pub biases: &'a [Tensor<T>],
}

impl<'a, T: Real> Gates<'a, T> {
    pub fn select(bank: &'a GateBank<T>, task: &str) -> Result<Self> {
        Ok(Self {
            biases: bank.get(task)?,
        })
    }

    pub fn from_slice(biases: &'a [Tensor<T>]) -> Self {
        Self { biases }
    }
}

#[derive(Clone, Debug)]
struct HiddenTrace<T> {
    pre: Tensor<T>,
    act: Tensor<T>,
    mask: Tensor<T>,
    out: Tensor<T>,
}

/// Intermediate values kept by a train-mode forward pass for backprop.
/// Eval-mode passes produce an empty trace.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T = f32> {
    mode: Mode,
    input: Tensor<T>,
    hidden: Vec<HiddenTrace<T>>,
    gate_factors: Option<Vec<Vec<T>>>,
    logp: Tensor<T>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn logp(&self) -> &Tensor<T> {
        &self.logp
    }

    pub fn dropout_masks(&self) -> Vec<&Tensor<T>> {
        self.hidden.iter().map(|h| &h.mask).collect()
    }

    pub fn activations(&self) -> Vec<&Tensor<T>> {
        self.hidden.iter().map(|h| &h.act).collect()
    }
}

fn dense<T: Real>(x: &Tensor<T>, layer: &DenseLayer<T>) -> Result<Tensor<T>> {
    let mut z = matmul(x, &layer.weights)?;
    z.add_row(&layer.bias)?;
    Ok(z)
}

/// Runs the network on a `batch × input` tensor and returns log-probabilities.
///
/// `dropout_rate` applies in train mode only. `rng` supplies dropout masks and
/// is not touched in eval mode.
pub fn forward<T: Real>(
    params: &BaseParams<T>,
    gates: Option<Gates<'_, T>>,
    x: &Tensor<T>,
    mode: Mode,
    dropout_rate: f32,
    rng: &mut RngStream,
) -> Result<(Tensor<T>, ForwardTrace<T>)> {
    let n_hidden = params.layers.len() - 1;
    if x.shape().len() != 2 || x.cols() != params.layers[0].weights.shape()[0] {
        return Err(Error::shape(
            "forward input",
            x.shape(),
            params.layers[0].weights.shape(),
        ));
    }
    let gate_factors = match gates {
        Some(g) => {
            if g.biases.len() != n_hidden
                || g.biases
                    .iter()
                    .zip(&params.layers)
                    .any(|(b, l)| b.len() != l.bias.len())
            {
                let widths: Vec<usize> = g.biases.iter().map(|b| b.len()).collect();
                return Err(Error::shape("gate slice", &widths, &params.hidden_sizes()));
            }
            Some(
                g.biases
                    .iter()
                    .map(|b| b.data().iter().map(|&v| sigmoid(v)).collect::<Vec<T>>())
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };

    let mut hidden = Vec::with_capacity(n_hidden);
    let mut h = x.clone();
    for l in 0..n_hidden {
        let pre = dense(&h, &params.layers[l])?;
        let act = relu(&pre);
        let gated = match &gate_factors {
            Some(f) => scale_columns(&act, &f[l]),
            None => act.clone(),
        };
        let (out, mask) = dropout(&gated, dropout_rate, mode, rng)?;
        h = out.clone();
        if mode == Mode::Train {
            hidden.push(HiddenTrace {
                pre,
                act,
                mask,
                out,
            });
        }
    }
    let logits = dense(&h, &params.layers[n_hidden])?;
    let logp = log_softmax(&logits);
    let trace = ForwardTrace {
        mode,
        input: if mode == Mode::Train {
            x.clone()
        } else {
            Tensor::zeros(&[0])
        },
        hidden,
        gate_factors: if mode == Mode::Train {
            gate_factors
        } else {
            None
        },
        logp: logp.clone(),
    };
    Ok((logp, trace))
}

/// Which gradients `backward` should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradTargets {
    pub base: bool,
    pub gates: bool,
    pub input: bool,
}

impl GradTargets {
    /// Base-model training: every dense weight and bias.
    pub const BASE: Self = Self {
        base: true,
        gates: false,
        input: false,
    };
    /// Gate training: only the active task's gate biases.
    pub const GATES: Self = Self {
        base: false,
        gates: true,
        input: false,
    };
    pub const ALL: Self = Self {
        base: true,
        gates: true,
        input: true,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    /// Same layout as [`BaseParams`].
    pub base: Option<BaseParams<T>>,
    pub gates: Option<Vec<Tensor<T>>>,
    pub input: Option<Tensor<T>>,
}

/// Reverse pass from `grad_logp` (gradient of the loss w.r.t. the
/// log-probabilities). Dropout masks recorded in the trace are reused.
pub fn backward<T: Real>(
    trace: &ForwardTrace<T>,
    params: &BaseParams<T>,
    gates: Option<Gates<'_, T>>,
    grad_logp: &Tensor<T>,
    targets: GradTargets,
) -> Result<Gradients<T>> {
    if trace.mode != Mode::Train {
        return Err(Error::MissingTrace);
    }
    if targets.gates && (gates.is_none() || trace.gate_factors.is_none()) {
        return Err(Error::Argument(
            "gate gradients requested for an ungated pass".into(),
        ));
    }
    let n_hidden = params.layers.len() - 1;
    let mut base_grads: Vec<Option<DenseLayer<T>>> = vec![None; n_hidden + 1];
    let mut gate_grads: Vec<Option<Tensor<T>>> = vec![None; n_hidden];

    let d_out = log_softmax_backward(grad_logp, &trace.logp)?;
    let below = |l: usize| -> &Tensor<T> {
        if l == 0 {
            &trace.input
        } else {
            &trace.hidden[l - 1].out
        }
    };
    if targets.base {
        base_grads[n_hidden] = Some(DenseLayer {
            weights: matmul_tn(below(n_hidden), &d_out)?,
            bias: d_out.sum_rows(),
        });
    }
    let needs_lower = |l: usize| l > 0 || targets.input;
    let mut d_h = if needs_lower(n_hidden) {
        Some(matmul_nt(&d_out, &params.layers[n_hidden].weights)?)
    } else {
        None
    };

    for l in (0..n_hidden).rev() {
        let Some(dh) = d_h.take() else { break };
        let hid = &trace.hidden[l];
        let d_gated = dh.zip_map(&hid.mask, "dropout backward", |g, m| g * m)?;
        let d_act = match (gates, &trace.gate_factors) {
            (Some(g), Some(_)) => {
                let (d_act, d_bias) = gate_backward(&d_gated, &hid.act, &g.biases[l])?;
                if targets.gates {
                    gate_grads[l] = Some(d_bias);
                }
                d_act
            }
            _ => d_gated,
        };
        if !targets.base && !needs_lower(l) {
            continue;
        }
        let d_pre = relu_backward(&d_act, &hid.pre)?;
        if targets.base {
            base_grads[l] = Some(DenseLayer {
                weights: matmul_tn(below(l), &d_pre)?,
                bias: d_pre.sum_rows(),
            });
        }
        if needs_lower(l) {
            d_h = Some(matmul_nt(&d_pre, &params.layers[l].weights)?);
        }
    }

    Ok(Gradients {
        base: targets.base.then(|| BaseParams {
            layers: base_grads.into_iter().map(|g| g.expect("filled")).collect(),
        }),
        gates: targets
            .gates
            .then(|| gate_grads.into_iter().map(|g| g.expect("filled")).collect()),
        input: if targets.input { d_h } else { None },
    })
}
