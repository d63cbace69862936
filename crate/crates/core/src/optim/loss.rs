use crate::error::{Error, Result};
use crate::ndcore::{Real, Tensor};

/// Mean negative log-likelihood over a batch of log-probability rows.
///
/// The returned gradient is `−1/batch` at each `(row, label)` and zero
/// elsewhere. The loss is accumulated in `f64` in row order.
pub fn nll_loss<T: Real>(logp: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let rows = logp.rows();
    if labels.len() != rows || logp.shape().len() != 2 {
        return Err(Error::shape("nll_loss", logp.shape(), &[labels.len()]));
    }
    if rows == 0 {
        return Err(Error::EmptyDataset("nll_loss on an empty batch"));
    }
    let classes = logp.cols();
    let mut grad = Tensor::zeros(logp.shape());
    let scale = T::from_f64(-1.0 / rows as f64);
    let mut total = 0.0f64;
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Label {
                row,
                label,
                classes,
            });
        }
        total -= logp.row(row)[label].as_f64();
        grad.row_mut(row)[label] = scale;
    }
    Ok((total / rows as f64, grad))
}
