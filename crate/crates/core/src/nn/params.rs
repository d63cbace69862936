use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{uniform_init, Real, RngStream, Tensor};

/// Layer widths and dropout rate of the classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_size: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_size: usize,
    pub dropout_rate: f32,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            input_size: 1024,
            hidden_sizes: vec![256, 128],
            output_size: 10,
            dropout_rate: 0.5,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.output_size == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::Argument("all layer sizes must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Argument(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// `[input, hidden..., output]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_size)
            .chain(self.hidden_sizes.iter().copied())
            .chain(std::iter::once(self.output_size))
            .collect()
    }
}

/// Weights are stored `fan_in × fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// The shared, task-independent weights of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseParams<T = f32> {
    pub layers: Vec<DenseLayer<T>>,
}

impl BaseParams<f32> {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(config: &MlpConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let sizes = config.layer_sizes();
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let bound = 1.0 / (w[0] as f32).sqrt();
                let mut stream = rng.child(&format!("dense{}", l + 1));
                Ok(DenseLayer {
                    weights: uniform_init(&mut stream, &[w[0], w[1]], -bound, bound)?,
                    bias: Tensor::zeros(&[w[1]]),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }
}

impl<T: Real> BaseParams<T> {
    pub fn zeros(config: &MlpConfig) -> Self {
        let layers = config
            .layer_sizes()
            .windows(2)
            .map(|w| DenseLayer {
                weights: Tensor::zeros(&[w[0], w[1]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Self { layers }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights.shape()[0]];
        sizes.extend(self.layers.iter().map(|l| l.bias.len()));
        sizes
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        let sizes = self.layer_sizes();
        sizes[1..sizes.len() - 1].to_vec()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Weight then bias for each layer, input side first.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn cast<U: Real>(&self) -> BaseParams<U> {
        BaseParams {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weights: l.weights.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }
}

/// Per-task gate biases, one vector per hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GateBank<T = f32> {
    tasks: Vec<String>,
    biases: Vec<Vec<Tensor<T>>>,
}

impl<T: Real> GateBank<T> {
    /// All-zero biases for every task.
    pub fn zeros(tasks: &[String], hidden_sizes: &[usize]) -> Self {
        Self {
            tasks: tasks.to_vec(),
            biases: tasks
                .iter()
                .map(|_| hidden_sizes.iter().map(|&n| Tensor::zeros(&[n])).collect())
                .collect(),
        }
    }

    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.biases
            .first()
            .map(|b| b.iter().map(|t| t.len()).collect())
            .unwrap_or_default()
    }

    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t == task)
            .ok_or_else(|| Error::UnknownTask {
                name: task.to_string(),
                tasks: self.tasks.clone(),
            })
    }

    pub fn slice(&self, task: usize) -> &[Tensor<T>] {
        &self.biases[task]
    }

    pub fn slice_mut(&mut self, task: usize) -> &mut [Tensor<T>] {
        &mut self.biases[task]
    }

    pub fn get(&self, task: &str) -> Result<&[Tensor<T>]> {
        Ok(self.slice(self.task_index(task)?))
    }

    /// Replaces one task's biases; shapes must match the bank.
    pub fn set(&mut self, task: &str, biases: Vec<Tensor<T>>) -> Result<()> {
        let t = self.task_index(task)?;
        let current: Vec<&[usize]> = self.biases[t].iter().map(|b| b.shape()).collect();
        let incoming: Vec<&[usize]> = biases.iter().map(|b| b.shape()).collect();
        if current != incoming {
            return Err(Error::Incompatible(format!(
                "gate shapes {incoming:?} do not match bank shapes {current:?}"
            )));
        }
        self.biases[t] = biases;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.biases.iter().flatten().map(|b| b.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> GateBank<U> {
        GateBank {
            tasks: self.tasks.clone(),
            biases: self
                .biases
                .iter()
                .map(|s| s.iter().map(|b| b.cast()).collect())
                .collect(),
        }
    }
}
