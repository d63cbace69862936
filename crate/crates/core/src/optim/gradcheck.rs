//! Finite-difference verification of the analytic gradients.
//!
//! Everything here runs in `f64`. For each trainable scalar the loss is
//! re-evaluated at `θ ± step` and the central difference is compared with the
//! backward pass. Dropout masks are held fixed by replaying the same random
//! stream for every evaluation.

use super::loss::nll_loss;
use crate::error::Result;
use crate::ndcore::{uniform_init, RngStream, Tensor};
use crate::nn::{
    backward, forward, log_softmax, log_softmax_backward, relu, relu_backward, BaseParams,
    GateBank, Gates, GradTargets, Gradients, MlpConfig, Mode,
};

/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckSetup {
    pub config: MlpConfig,
    pub batch: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckSetup {
    /// An 8-4-3 gated network with one hidden layer of 4 units.
    pub fn toy(seed: u64) -> Self {
        Self {
            config: MlpConfig {
                input_size: 8,
                hidden_sizes: vec![4],
                output_size: 3,
                dropout_rate: 0.5,
            },
            batch: 4,
            seed,
            step: 1e-4,
            tolerance: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub kind: &'static str,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn entry(&self, kind: &str) -> Option<&GradCheckEntry> {
        self.entries.iter().find(|e| e.kind == kind)
    }

    /// Folds several reports into one, keeping the worst error per kind.
    pub fn merge(reports: impl IntoIterator<Item = GradCheckReport>) -> Self {
        let mut out: Vec<GradCheckEntry> = Vec::new();
        for report in reports {
            for e in report.entries {
                match out.iter_mut().find(|o| o.kind == e.kind) {
                    Some(o) => {
                        o.checked += e.checked;
                        o.max_rel_error = o.max_rel_error.max(e.max_rel_error);
                        o.passed &= e.passed;
                    }
                    None => out.push(e),
                }
            }
        }
        Self { entries: out }
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<12} checked {:>5}  max rel error {:.3e}  {}",
                e.kind,
                e.checked,
                e.max_rel_error,
                if e.passed { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

struct Problem {
    params: BaseParams<f64>,
    bank: GateBank<f64>,
    x: Tensor<f64>,
    labels: Vec<usize>,
    dropout_rate: f32,
    dropout_rng: RngStream,
}

impl Problem {
    fn build(setup: &GradCheckSetup) -> Result<Self> {
        let root = RngStream::new(setup.seed);
        let params = BaseParams::init(&setup.config, &mut root.child("init"))?.cast::<f64>();
        let mut draw = root.child("data");
        let mut bank = GateBank::<f64>::zeros(&["check".to_string()], &setup.config.hidden_sizes);
        for b in bank.slice_mut(0) {
            *b = uniform_init(&mut draw, b.shape(), -2.0, 2.0)?.cast();
        }
        let labels = (0..setup.batch)
            .map(|_| draw.below(setup.config.output_size as u64) as usize)
            .collect();
        // Redraw inputs until no pre-activation sits near the ReLU kink.
        let margin = 1e3 * setup.step;
        let mut x = Tensor::zeros(&[setup.batch, setup.config.input_size]);
        for _ in 0..1000 {
            x = uniform_init(&mut draw, x.shape(), -1.0, 1.0)?.cast();
            if min_abs_preactivation(&params, &x)? > margin {
                break;
            }
        }
        Ok(Self {
            params,
            bank,
            x,
            labels,
            dropout_rate: setup.config.dropout_rate,
            dropout_rng: root.child("dropout"),
        })
    }

    fn loss(&self, params: &BaseParams<f64>, bank: &GateBank<f64>, x: &Tensor<f64>) -> Result<f64> {
        let gates = Some(Gates::from_slice(bank.slice(0)));
        let mut rng = self.dropout_rng.clone();
        let (logp, _) = forward(params, gates, x, Mode::Train, self.dropout_rate, &mut rng)?;
        Ok(nll_loss(&logp, &self.labels)?.0)
    }

    fn analytic(&self) -> Result<Gradients<f64>> {
        let gates = Some(Gates::from_slice(self.bank.slice(0)));
        let mut rng = self.dropout_rng.clone();
        let (logp, trace) = forward(
            &self.params,
            gates,
            &self.x,
            Mode::Train,
            self.dropout_rate,
            &mut rng,
        )?;
        let (_, grad_logp) = nll_loss(&logp, &self.labels)?;
        backward(&trace, &self.params, gates, &grad_logp, GradTargets::ALL)
    }
}

fn min_abs_preactivation(params: &BaseParams<f64>, x: &Tensor<f64>) -> Result<f64> {
    let mut h = x.clone();
    let mut min = f64::INFINITY;
    for layer in &params.layers[..params.layers.len() - 1] {
        let mut z = crate::ndcore::matmul(&h, &layer.weights)?;
        z.add_row(&layer.bias)?;
        min = z.data().iter().fold(min, |m, v| m.min(v.abs()));
        // gates and dropout only rescale, so the sign pattern below is unchanged
        h = relu(&z);
    }
    Ok(min)
}

fn central_difference(step: f64, eval: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    Ok((eval(step)? - eval(-step)?) / (2.0 * step))
}

struct Tally {
    kind: &'static str,
    checked: usize,
    max: f64,
}

impl Tally {
    fn new(kind: &'static str) -> Self {
        Self {
            kind,
            checked: 0,
            max: 0.0,
        }
    }

    fn add(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.max = self.max.max(relative_error(analytic, numeric));
    }

    fn finish(self, tolerance: f64) -> GradCheckEntry {
        GradCheckEntry {
            kind: self.kind,
            checked: self.checked,
            max_rel_error: self.max,
            passed: self.max < tolerance,
        }
    }
}

/// Checks every trainable scalar of a gated toy network, plus the input
/// gradient and the parameter-free ReLU, log-softmax and NLL kernels.
pub fn finite_diff_check(setup: &GradCheckSetup) -> Result<GradCheckReport> {
    finite_diff_check_with(setup, |_| {})
}

/// Like [`finite_diff_check`], but lets `tamper` modify the analytic
/// gradients before comparison (used to confirm the harness flags errors).
pub fn finite_diff_check_with(
    setup: &GradCheckSetup,
    tamper: impl FnOnce(&mut Gradients<f64>),
) -> Result<GradCheckReport> {
    let problem = Problem::build(setup)?;
    let mut grads = problem.analytic()?;
    tamper(&mut grads);
    let h = setup.step;

    let mut weights = Tally::new("dense_weight");
    let mut biases = Tally::new("dense_bias");
    let base_grads = grads.base.as_ref().expect("requested");
    for (l, layer) in problem.params.layers.iter().enumerate() {
        for i in 0..layer.weights.len() {
            let numeric = central_difference(h, |d| {
                let mut p = problem.params.clone();
                p.layers[l].weights.data_mut()[i] += d;
                problem.loss(&p, &problem.bank, &problem.x)
            })?;
            weights.add(base_grads.layers[l].weights.data()[i], numeric);
        }
        for i in 0..layer.bias.len() {
            let numeric = central_difference(h, |d| {
                let mut p = problem.params.clone();
                p.layers[l].bias.data_mut()[i] += d;
                problem.loss(&p, &problem.bank, &problem.x)
            })?;
            biases.add(base_grads.layers[l].bias.data()[i], numeric);
        }
    }

    let mut gates = Tally::new("gate_bias");
    let gate_grads = grads.gates.as_ref().expect("requested");
    for (l, g) in gate_grads.iter().enumerate() {
        for i in 0..g.len() {
            let numeric = central_difference(h, |d| {
                let mut bank = problem.bank.clone();
                bank.slice_mut(0)[l].data_mut()[i] += d;
                problem.loss(&problem.params, &bank, &problem.x)
            })?;
            gates.add(g.data()[i], numeric);
        }
    }

    let mut input = Tally::new("input");
    let input_grads = grads.input.as_ref().expect("requested");
    for i in 0..problem.x.len() {
        let numeric = central_difference(h, |d| {
            let mut x = problem.x.clone();
            x.data_mut()[i] += d;
            problem.loss(&problem.params, &problem.bank, &x)
        })?;
        input.add(input_grads.data()[i], numeric);
    }

    let mut kernels = kernel_checks(setup)?;
    let mut entries = vec![
        weights.finish(setup.tolerance),
        biases.finish(setup.tolerance),
        gates.finish(setup.tolerance),
        input.finish(setup.tolerance),
    ];
    entries.append(&mut kernels);
    Ok(GradCheckReport { entries })
}

/// Parameter-free kernels checked in isolation against random upstream
/// gradients.
fn kernel_checks(setup: &GradCheckSetup) -> Result<Vec<GradCheckEntry>> {
    let mut rng = RngStream::new(setup.seed).child("kernels");
    let h = setup.step;
    let (rows, cols) = (3, 5);
    let upstream: Tensor<f64> = uniform_init(&mut rng, &[rows, cols], -1.0, 1.0)?.cast();
    let dot = |a: &Tensor<f64>| -> f64 {
        a.data()
            .iter()
            .zip(upstream.data())
            .map(|(x, u)| x * u)
            .sum()
    };

    let mut relu_tally = Tally::new("relu");
    let mut z: Tensor<f64> = uniform_init(&mut rng, &[rows, cols], -1.0, 1.0)?.cast();
    for v in z.data_mut() {
        if v.abs() < 1e3 * h {
            *v += 0.1;
        }
    }
    let analytic = relu_backward(&upstream, &z)?;
    for i in 0..z.len() {
        let numeric = central_difference(h, |d| Ok(dot(&perturbed(&z, i, d, relu))))?;
        relu_tally.add(analytic.data()[i], numeric);
    }

    let mut lsm_tally = Tally::new("log_softmax");
    let logits: Tensor<f64> = uniform_init(&mut rng, &[rows, cols], -3.0, 3.0)?.cast();
    let analytic = log_softmax_backward(&upstream, &log_softmax(&logits))?;
    for i in 0..logits.len() {
        let numeric = central_difference(h, |d| Ok(dot(&perturbed(&logits, i, d, log_softmax))))?;
        lsm_tally.add(analytic.data()[i], numeric);
    }

    let mut nll_tally = Tally::new("nll");
    let labels: Vec<usize> = (0..rows).map(|_| rng.below(cols as u64) as usize).collect();
    let logp: Tensor<f64> = log_softmax(&uniform_init(&mut rng, &[rows, cols], -3.0, 3.0)?.cast());
    let (_, analytic) = nll_loss(&logp, &labels)?;
    for i in 0..logp.len() {
        let numeric = central_difference(h, |d| {
            Ok(nll_loss(&perturbed(&logp, i, d, |t| t.clone()), &labels)?.0)
        })?;
        nll_tally.add(analytic.data()[i], numeric);
    }

    Ok(vec![
        relu_tally.finish(setup.tolerance),
        lsm_tally.finish(setup.tolerance),
        nll_tally.finish(setup.tolerance),
    ])
}

fn perturbed(
    t: &Tensor<f64>,
    i: usize,
    delta: f64,
    f: impl Fn(&Tensor<f64>) -> Tensor<f64>,
) -> Tensor<f64> {
    let mut t = t.clone();
    t.data_mut()[i] += delta;
    f(&t)
}
