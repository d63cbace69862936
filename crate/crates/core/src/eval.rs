//! Cued evaluation, categorical isolation, confusion matrices and gate exports.
//!
//! At test time the cue is the category of the true label. A gated model runs
//! each image with that category's gate biases; a base model ignores the cue.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::data::{stack, LabeledImage, Taxonomy};
use crate::error::{Error, Result};
use crate::ndcore::{RngStream, Tensor};
use crate::nn::{forward, predict, sigmoid, BaseParams, GateBank, Gates, Mode};

const EVAL_CHUNK: usize = 256;

/// Per-image result of an eval-mode forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleScore {
    pub loss: f64,
    pub prediction: usize,
}

/// Eval-mode NLL and prediction for each image, in input order.
///
/// Rows do not interact, so chunking does not change any per-image value.
pub fn score<'a>(
    params: &BaseParams,
    gates: Option<Gates<'_>>,
    images: impl IntoIterator<Item = &'a LabeledImage>,
) -> Result<Vec<SampleScore>> {
    let images: Vec<&LabeledImage> = images.into_iter().collect();
    let mut out = Vec::with_capacity(images.len());
    let mut unused = RngStream::new(0);
    for chunk in images.chunks(EVAL_CHUNK) {
        let (x, labels) = stack(chunk.iter().copied());
        let (logp, _) = forward(params, gates, &x, Mode::Eval, 0.0, &mut unused)?;
        let preds = predict(&logp);
        for (row, (&label, pred)) in labels.iter().zip(preds).enumerate() {
            let classes = logp.cols();
            if label >= classes {
                return Err(Error::Label {
                    row,
                    label,
                    classes,
                });
            }
            out.push(SampleScore {
                loss: 0.0 - logp.row(row)[label] as f64,
                prediction: pred,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Base,
    Gated,
}

impl ModelTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Base => "base",
            ModelTag::Gated => "gated",
        }
    }
}

/// Row-normalized confusion matrix with the raw counts kept alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
    pub rates: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    /// Header of class names, then one row per true class.
    pub fn write_csv<W: Write>(&self, out: W, class_names: &[String]) -> Result<()> {
        if class_names.len() != self.rates.len() {
            return Err(Error::Argument(format!(
                "{} class names for a {}-class confusion matrix",
                class_names.len(),
                self.rates.len()
            )));
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["true_class".to_string()];
        header.extend(class_names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in class_names.iter().zip(&self.rates) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub model: ModelTag,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub categorical_isolation: f64,
    pub n_test: usize,
    #[serde(skip)]
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }

    pub fn write_confusion(&self, path: &Path, class_names: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.confusion.write_csv(file, class_names)
    }
}

/// Evaluates `base` on `test`, with cue-selected gates when `gates` is given.
///
/// Images are grouped by cue for batching; per-image values and the index
/// order of the final reduction match one-at-a-time evaluation.
pub fn evaluate(
    base: &BaseParams,
    gates: Option<&GateBank>,
    test: &[LabeledImage],
    taxonomy: &Taxonomy,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("test set is empty"));
    }
    let mut scores: Vec<Option<SampleScore>> = vec![None; test.len()];
    for (cat, cat_name) in taxonomy.categories().iter().enumerate() {
        let idx: Vec<usize> = (0..test.len())
            .filter(|&i| taxonomy.category_of(test[i].label) == cat)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let selected = match gates {
            Some(bank) => Some(Gates::from_slice(
                bank.get(cat_name)
                    .map_err(|_| Error::MissingGates(cat_name.clone()))?,
            )),
            None => None,
        };
        let group = score(base, selected, idx.iter().map(|&i| &test[i]))?;
        for (i, s) in idx.into_iter().zip(group) {
            scores[i] = Some(s);
        }
    }
    let scores: Vec<SampleScore> = scores
        .into_iter()
        .map(|s| s.expect("every label maps to a category"))
        .collect();
    let labels: Vec<usize> = test.iter().map(|im| im.label).collect();
    let preds: Vec<usize> = scores.iter().map(|s| s.prediction).collect();
    let n = test.len();
    let loss = scores.iter().map(|s| s.loss).sum::<f64>() / n as f64;
    let correct = preds.iter().zip(&labels).filter(|(p, y)| p == y).count();
    Ok(MetricsReport {
        model: if gates.is_some() {
            ModelTag::Gated
        } else {
            ModelTag::Base
        },
        test_loss: loss,
        test_accuracy: correct as f64 / n as f64,
        categorical_isolation: categorical_isolation(&preds, &labels, taxonomy)?,
        n_test: n,
        confusion: confusion_matrix(&preds, &labels, taxonomy.num_classes())?,
    })
}

fn check_pairs(preds: &[usize], labels: &[usize], classes: usize) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if let Some(bad) = preds.iter().chain(labels).find(|&&v| v >= classes) {
        return Err(Error::Argument(format!(
            "class index {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Number of predictions whose category equals the true label's category.
pub fn isolation_count(preds: &[usize], labels: &[usize], taxonomy: &Taxonomy) -> Result<usize> {
    check_pairs(preds, labels, taxonomy.num_classes())?;
    Ok(preds
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| taxonomy.category_of(p) == taxonomy.category_of(y))
        .count())
}

/// Fraction of predictions that fall in the true label's category.
pub fn categorical_isolation(
    preds: &[usize],
    labels: &[usize],
    taxonomy: &Taxonomy,
) -> Result<f64> {
    let hits = isolation_count(preds, labels, taxonomy)?;
    if preds.is_empty() {
        return Err(Error::EmptyDataset("no predictions"));
    }
    Ok(hits as f64 / preds.len() as f64)
}

pub fn confusion_matrix(
    preds: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix> {
    check_pairs(preds, labels, classes)?;
    let mut counts = vec![vec![0usize; classes]; classes];
    for (&p, &y) in preds.iter().zip(labels) {
        counts[y][p] += 1;
    }
    let rates = counts
        .iter()
        .map(|row| {
            let support: usize = row.iter().sum();
            row.iter()
                .map(|&c| {
                    if support == 0 {
                        0.0
                    } else {
                        c as f64 / support as f64
                    }
                })
                .collect()
        })
        .collect();
    Ok(ConfusionMatrix { counts, rates })
}

/// Grid shape for a layer of `n` gates: the widest column count not above √n
/// that divides `n`. 256 → 16×16, 128 → 16×8.
pub fn grid_layout(n: usize) -> (usize, usize) {
    let mut cols = (n as f64).sqrt().floor() as usize;
    while cols > 1 && !n.is_multiple_of(cols) {
        cols -= 1;
    }
    let cols = cols.max(1);
    (n / cols, cols)
}

/// Copy of a gate bank prepared for export.
#[derive(Clone, Debug, PartialEq)]
pub struct GateSnapshot {
    pub tasks: Vec<String>,
    /// `biases[task][layer]`
    pub biases: Vec<Vec<Vec<f32>>>,
}

impl GateSnapshot {
    pub fn from_bank(bank: &GateBank) -> Self {
        Self {
            tasks: bank.tasks().to_vec(),
            biases: (0..bank.tasks().len())
                .map(|t| bank.slice(t).iter().map(|b| b.data().to_vec()).collect())
                .collect(),
        }
    }

    pub fn layer_widths(&self) -> Vec<usize> {
        self.biases
            .first()
            .map(|l| l.iter().map(Vec::len).collect())
            .unwrap_or_default()
    }

    pub fn factors(&self, task: usize, layer: usize) -> Vec<f32> {
        self.biases[task][layer]
            .iter()
            .map(|&b| sigmoid(b))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateCell {
    pub neuron_index: usize,
    pub row: usize,
    pub col: usize,
    /// One entry per task.
    pub biases: Vec<f32>,
    /// `|b_0 − b_1|` between the first two tasks; zero with fewer tasks.
    pub abs_diff: f32,
    pub sigmas: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateImageLayer {
    /// 1-based layer number.
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<GateCell>,
}

impl GateImageLayer {
    /// Row-major grid of one task's raw biases.
    pub fn grid(&self, task: usize) -> Vec<Vec<f32>> {
        self.cells
            .chunks(self.cols)
            .map(|r| r.iter().map(|c| c.biases[task]).collect())
            .collect()
    }

    pub fn diff_grid(&self) -> Vec<Vec<f32>> {
        self.cells
            .chunks(self.cols)
            .map(|r| r.iter().map(|c| c.abs_diff).collect())
            .collect()
    }

    /// Biases of every task rescaled to [0, 1] by the layer-wide min and max.
    pub fn normalized(&self) -> Vec<Vec<f32>> {
        let all = self.cells.iter().flat_map(|c| c.biases.iter().copied());
        let (lo, hi) = all.fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let span = hi - lo;
        let tasks = self.cells.first().map_or(0, |c| c.biases.len());
        (0..tasks)
            .map(|t| {
                self.cells
                    .iter()
                    .map(|c| {
                        if span > 0.0 {
                            (c.biases[t] - lo) / span
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn export_gate_images(snapshot: &GateSnapshot) -> Vec<GateImageLayer> {
    snapshot
        .layer_widths()
        .iter()
        .enumerate()
        .map(|(l, &width)| {
            let (rows, cols) = grid_layout(width);
            let cells = (0..width)
                .map(|m| {
                    let biases: Vec<f32> = snapshot.biases.iter().map(|task| task[l][m]).collect();
                    let abs_diff = match biases.as_slice() {
                        [a, b, ..] => (a - b).abs(),
                        _ => 0.0,
                    };
                    GateCell {
                        neuron_index: m,
                        row: m / cols,
                        col: m % cols,
                        sigmas: biases.iter().map(|&b| sigmoid(b)).collect(),
                        biases,
                        abs_diff,
                    }
                })
                .collect();
            GateImageLayer {
                layer: l + 1,
                rows,
                cols,
                cells,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RawBias {
    pub task: String,
    pub layer: usize,
    pub neuron_index: usize,
    pub bias: f32,
}

/// Raw bias values keyed by task and 1-based layer, task-major.
pub fn export_gate_histograms(snapshot: &GateSnapshot) -> Vec<RawBias> {
    let mut out = Vec::new();
    for (task, layers) in snapshot.tasks.iter().zip(&snapshot.biases) {
        for (l, biases) in layers.iter().enumerate() {
            for (m, &bias) in biases.iter().enumerate() {
                out.push(RawBias {
                    task: task.clone(),
                    layer: l + 1,
                    neuron_index: m,
                    bias,
                });
            }
        }
    }
    out
}

pub fn write_gate_layer_csv<W: Write>(
    layer: &GateImageLayer,
    tasks: &[String],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["neuron_index".to_string(), "row".into(), "col".into()];
    header.extend(tasks.iter().map(|t| format!("bias_{t}")));
    header.push("abs_diff".into());
    header.extend(tasks.iter().map(|t| format!("sigma_{t}")));
    w.write_record(&header)?;
    for c in &layer.cells {
        let mut rec = vec![
            c.neuron_index.to_string(),
            c.row.to_string(),
            c.col.to_string(),
        ];
        rec.extend(c.biases.iter().map(f32::to_string));
        rec.push(c.abs_diff.to_string());
        rec.extend(c.sigmas.iter().map(f32::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gate_raw_csv<W: Write>(rows: &[RawBias], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `gate_biases_layer<l>.csv` for every layer and `gate_raw.csv`.
pub fn write_gate_exports(snapshot: &GateSnapshot, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for layer in export_gate_images(snapshot) {
        let path = dir.join(format!("gate_biases_layer{}.csv", layer.layer));
        let file = std::fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
        write_gate_layer_csv(&layer, &snapshot.tasks, file)?;
        written.push(path);
    }
    let path = dir.join("gate_raw.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
    write_gate_raw_csv(&export_gate_histograms(snapshot), file)?;
    written.push(path);
    Ok(written)
}

/// Class probabilities for a single image, for inspection.
pub fn class_probabilities(
    params: &BaseParams,
    gates: Option<Gates<'_>>,
    image: &LabeledImage,
) -> Result<Vec<f32>> {
    let x = Tensor::matrix(1, image.pixels.len(), image.pixels.data().to_vec())?;
    let (logp, _) = forward(params, gates, &x, Mode::Eval, 0.0, &mut RngStream::new(0))?;
    Ok(logp.data().iter().map(|v| v.exp()).collect())
}
