use crate::error::{Error, Result};
use crate::ndcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmspropConfig {
    pub lr: f32,
    /// Smoothing constant of the squared-gradient average.
    pub rho: f32,
    pub eps: f32,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            rho: 0.99,
            eps: 1e-8,
        }
    }
}

/// Plain (non-centered, no momentum) RMSprop:
///
/// ```text
/// v ← ρ·v + (1−ρ)·g²
/// θ ← θ − lr·g / (√v + ε)
/// ```
#[derive(Clone, Debug)]
pub struct Rmsprop {
    config: RmspropConfig,
    v: Vec<Tensor>,
}

impl Rmsprop {
    /// Fresh state (all `v = 0`) shaped like `params`.
    pub fn new<'a>(config: RmspropConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self {
            config,
            v: params
                .into_iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect(),
        }
    }

    pub fn config(&self) -> &RmspropConfig {
        &self.config
    }

    pub fn squared_averages(&self) -> &[Tensor] {
        &self.v
    }

    pub fn step(&mut self, mut params: Vec<&mut Tensor>, grads: Vec<&Tensor>) -> Result<()> {
        if params.len() != self.v.len() || grads.len() != self.v.len() {
            return Err(Error::shape(
                "rmsprop_step",
                &[params.len(), grads.len()],
                &[self.v.len()],
            ));
        }
        for ((p, g), v) in params.iter().zip(&grads).zip(&self.v) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::shape("rmsprop_step", p.shape(), g.shape()));
            }
        }
        let RmspropConfig { lr, rho, eps } = self.config;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.v) {
            for ((theta, &grad), avg) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(v.data_mut().iter_mut())
            {
                *avg = rho * *avg + (1.0 - rho) * grad * grad;
                *theta -= lr * grad / (avg.sqrt() + eps);
            }
        }
        Ok(())
    }
}
