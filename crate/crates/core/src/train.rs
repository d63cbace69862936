//! Two-phase training.
//!
//! Phase one trains every dense layer on all classes with no gates present.
//! Phase two freezes those weights and, for one category at a time, trains
//! only that category's gate biases on images of the category's classes.
//! Both phases validate every `val_interval_updates` updates and keep the
//! parameters with the lowest validation loss.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{filter_by_category, minibatches, stack, DataSplit, LabeledImage, Taxonomy};
use crate::error::{Error, Result};
use crate::eval::score;
use crate::ndcore::{RngStream, Tensor};
use crate::nn::{backward, forward, BaseParams, Gates, GradTargets, MlpConfig, Mode};
use crate::optim::{nll_loss, Rmsprop, RmspropConfig};

pub const BASE_PHASE: &str = "base";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub epochs_base: usize,
    pub epochs_gates: usize,
    pub batch_size: usize,
    pub val_interval_updates: usize,
    pub rmsprop: RmspropConfig,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs_base: 30,
            epochs_gates: 15,
            batch_size: 32,
            val_interval_updates: 200,
            rmsprop: RmspropConfig::default(),
            seed: 0,
        }
    }
}

impl TrainSchedule {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.val_interval_updates == 0 {
            return Err(Error::Argument(
                "batch size and validation interval must be positive".into(),
            ));
        }
        if self.rmsprop.lr.is_nan() || self.rmsprop.lr <= 0.0 {
            return Err(Error::Argument("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Root random stream of a run; phases draw labelled children from it.
    pub fn root_rng(&self) -> RngStream {
        RngStream::new(self.seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveSplit {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub phase: String,
    pub split: CurveSplit,
    pub loss: f64,
}

/// Recorded losses. Train entries are means over the preceding interval.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub records: Vec<LossRecord>,
}

impl LossCurve {
    pub fn push(&mut self, step: usize, phase: &str, split: CurveSplit, loss: f64) {
        self.records.push(LossRecord {
            step,
            phase: phase.to_string(),
            split,
            loss,
        });
    }

    pub fn series(&self, phase: &str, split: CurveSplit) -> Vec<&LossRecord> {
        self.records
            .iter()
            .filter(|r| r.phase == phase && r.split == split)
            .collect()
    }

    pub fn extend(&mut self, other: LossCurve) {
        self.records.extend(other.records);
    }

    /// Columns `step,phase,split,loss`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_csv(file)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }
}

/// Called after each validation with `(step, interval train loss, val loss)`.
pub type Progress<'a> = &'a mut dyn FnMut(usize, f64, f64);

#[derive(Clone, Debug)]
pub struct BaseTraining {
    pub params: BaseParams,
    pub best_val_loss: f64,
    pub best_step: usize,
    pub updates: usize,
    pub curve: LossCurve,
}

#[derive(Clone, Debug)]
pub struct GateTraining {
    pub category: String,
    pub biases: Vec<Tensor>,
    pub best_val_loss: f64,
    pub best_step: usize,
    pub updates: usize,
    pub curve: LossCurve,
}

/// Eval-mode mean NLL over `images`. The sum is reduced in ascending order
/// of the per-sample losses, so the result does not depend on image order.
pub fn validate(
    params: &BaseParams,
    gates: Option<Gates<'_>>,
    images: &[LabeledImage],
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::EmptyDataset("validation set is empty"));
    }
    let scores = score(params, gates, images.iter())?;
    Ok(order_independent_mean(scores.iter().map(|s| s.loss)))
}

pub(crate) fn order_independent_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

struct Tracker<S> {
    phase: String,
    interval: usize,
    step: usize,
    interval_sum: f64,
    interval_n: usize,
    best: Option<(S, f64, usize)>,
    curve: LossCurve,
}

impl<S: Clone> Tracker<S> {
    fn new(phase: &str, interval: usize) -> Self {
        Self {
            phase: phase.to_string(),
            interval,
            step: 0,
            interval_sum: 0.0,
            interval_n: 0,
            best: None,
            curve: LossCurve::default(),
        }
    }

    fn record_update(&mut self, loss: f64) -> bool {
        self.step += 1;
        self.interval_sum += loss;
        self.interval_n += 1;
        self.step.is_multiple_of(self.interval)
    }

    fn checkpoint(&mut self, state: &S, val_loss: f64, progress: &mut Option<Progress<'_>>) {
        let train_loss = self.interval_sum / self.interval_n as f64;
        self.curve
            .push(self.step, &self.phase, CurveSplit::Train, train_loss);
        self.curve
            .push(self.step, &self.phase, CurveSplit::Val, val_loss);
        self.interval_sum = 0.0;
        self.interval_n = 0;
        if self
            .best
            .as_ref()
            .is_none_or(|(_, best, _)| val_loss < *best)
        {
            self.best = Some((state.clone(), val_loss, self.step));
        }
        if let Some(p) = progress {
            p(self.step, train_loss, val_loss);
        }
    }
}

/// Trains all base parameters on `split.train`, validating on `split.val`.
pub fn train_base(
    split: &DataSplit,
    config: &MlpConfig,
    schedule: &TrainSchedule,
    mut progress: Option<Progress<'_>>,
) -> Result<BaseTraining> {
    config.validate()?;
    schedule.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyDataset("base training set is empty"));
    }
    if split.val.is_empty() {
        return Err(Error::EmptyDataset("base validation set is empty"));
    }
    let root = schedule.root_rng();
    let mut params = BaseParams::init(config, &mut root.child("init"))?;
    let mut shuffle = root.child("base/shuffle");
    let mut drop = root.child("base/dropout");
    let mut opt = Rmsprop::new(schedule.rmsprop, params.tensors());
    let mut tracker = Tracker::new(BASE_PHASE, schedule.val_interval_updates);

    for _ in 0..schedule.epochs_base {
        for batch in minibatches(&split.train, schedule.batch_size, &mut shuffle)? {
            let (x, labels) = stack(batch);
            let (logp, trace) = forward(
                &params,
                None,
                &x,
                Mode::Train,
                config.dropout_rate,
                &mut drop,
            )?;
            let (loss, grad_logp) = nll_loss(&logp, &labels)?;
            let grads = backward(&trace, &params, None, &grad_logp, GradTargets::BASE)?
                .base
                .expect("base gradients requested");
            opt.step(params.tensors_mut(), grads.tensors())?;
            if tracker.record_update(loss) {
                let val = validate(&params, None, &split.val)?;
                tracker.checkpoint(&params, val, &mut progress);
            }
        }
    }
    if tracker.interval_n > 0 || tracker.best.is_none() {
        let val = validate(&params, None, &split.val)?;
        if tracker.interval_n == 0 {
            // no updates at all: record the initial parameters
            tracker.interval_n = 1;
            tracker.interval_sum = f64::NAN;
        }
        tracker.checkpoint(&params, val, &mut progress);
    }
    let (params, best_val_loss, best_step) = tracker.best.take().expect("at least one checkpoint");
    Ok(BaseTraining {
        params,
        best_val_loss,
        best_step,
        updates: tracker.step,
        curve: tracker.curve,
    })
}

/// Trains the gate biases of `category` on that category's training images,
/// starting from zero, with `base` frozen.
pub fn train_gates(
    base: &BaseParams,
    config: &MlpConfig,
    category: &str,
    split: &DataSplit,
    taxonomy: &Taxonomy,
    schedule: &TrainSchedule,
    mut progress: Option<Progress<'_>>,
) -> Result<GateTraining> {
    config.validate()?;
    schedule.validate()?;
    let cat = taxonomy.category_index(category)?;
    if base.layer_sizes() != config.layer_sizes() {
        return Err(Error::Incompatible(format!(
            "base layer sizes {:?} do not match config {:?}",
            base.layer_sizes(),
            config.layer_sizes()
        )));
    }
    let train = filter_by_category(&split.train, category, taxonomy)?;
    let val = filter_by_category(&split.val, category, taxonomy)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset(
            "category has no training or validation images",
        ));
    }
    let root = schedule.root_rng();
    let mut shuffle = root.child(&format!("gates/{category}/shuffle"));
    let mut drop = root.child(&format!("gates/{category}/dropout"));
    let mut biases: Vec<Tensor> = base
        .hidden_sizes()
        .iter()
        .map(|&n| Tensor::zeros(&[n]))
        .collect();
    let mut opt = Rmsprop::new(schedule.rmsprop, biases.iter());
    let mut tracker = Tracker::new(category, schedule.val_interval_updates);

    for _ in 0..schedule.epochs_gates {
        for batch in minibatches(&train, schedule.batch_size, &mut shuffle)? {
            let (x, labels) = stack(batch);
            assert!(
                labels.iter().all(|&y| taxonomy.category_of(y) == cat),
                "gate training batch contains a label outside `{category}`"
            );
            let gates = Some(Gates::from_slice(&biases));
            let (logp, trace) =
                forward(base, gates, &x, Mode::Train, config.dropout_rate, &mut drop)?;
            let (loss, grad_logp) = nll_loss(&logp, &labels)?;
            let grads = backward(&trace, base, gates, &grad_logp, GradTargets::GATES)?
                .gates
                .expect("gate gradients requested");
            opt.step(biases.iter_mut().collect(), grads.iter().collect())?;
            if tracker.record_update(loss) {
                let v = validate(base, Some(Gates::from_slice(&biases)), &val)?;
                tracker.checkpoint(&biases, v, &mut progress);
            }
        }
    }
    if tracker.interval_n > 0 || tracker.best.is_none() {
        let v = validate(base, Some(Gates::from_slice(&biases)), &val)?;
        if tracker.interval_n == 0 {
            tracker.interval_n = 1;
            tracker.interval_sum = f64::NAN;
        }
        tracker.checkpoint(&biases, v, &mut progress);
    }
    let (biases, best_val_loss, best_step) = tracker.best.take().expect("at least one checkpoint");
    Ok(GateTraining {
        category: category.to_string(),
        biases,
        best_val_loss,
        best_step,
        updates: tracker.step,
        curve: tracker.curve,
    })
}
