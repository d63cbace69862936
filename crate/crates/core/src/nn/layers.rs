//! Stateless layer kernels and their gradients.
//!
//! Batched tensors are `rows × width`; per-unit vectors (gate biases) are
//! broadcast across rows.

use crate::error::{Error, Result};
use crate::ndcore::{Real, RngStream, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn check_width<T: Real>(op: &'static str, x: &Tensor<T>, v: &Tensor<T>) -> Result<()> {
    if v.shape().len() != 1 || x.cols() != v.len() {
        return Err(Error::shape(op, x.shape(), v.shape()));
    }
    Ok(())
}

/// `g = a · σ(b)`, with `b` broadcast over the rows of `a`.
pub fn gate_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_width("gate_forward", a, b)?;
    let factors: Vec<T> = b.data().iter().map(|&v| sigmoid(v)).collect();
    Ok(scale_columns(a, &factors))
}

/// Gradients of `g = a · σ(b)`: `∂/∂a = σ(b)` and `∂/∂b = a·σ(b)(1−σ(b))`.
/// The bias gradient is summed over rows.
pub fn gate_backward<T: Real>(
    upstream: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_width("gate_backward", a, b)?;
    if upstream.shape() != a.shape() {
        return Err(Error::shape("gate_backward", upstream.shape(), a.shape()));
    }
    let factors: Vec<T> = b.data().iter().map(|&v| sigmoid(v)).collect();
    let grad_a = scale_columns(upstream, &factors);
    let width = b.len();
    let mut grad_b = vec![T::zero(); width];
    for (up_row, a_row) in upstream
        .data()
        .chunks_exact(width)
        .zip(a.data().chunks_exact(width))
    {
        for m in 0..width {
            let s = factors[m];
            grad_b[m] = grad_b[m] + up_row[m] * a_row[m] * s * (T::one() - s);
        }
    }
    Ok((grad_a, Tensor::new(b.shape(), grad_b)?))
}

pub(crate) fn scale_columns<T: Real>(x: &Tensor<T>, factors: &[T]) -> Tensor<T> {
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(factors.len()) {
        for (v, &f) in row.iter_mut().zip(factors) {
            *v = *v * f;
        }
    }
    out
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// `upstream · 1[x > 0]`.
pub fn relu_backward<T: Real>(upstream: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    upstream.zip_map(x, "relu_backward", |u, v| {
        if v > T::zero() {
            u
        } else {
            T::zero()
        }
    })
}

/// Inverted dropout. The returned mask holds the per-unit multiplier:
/// `0` for dropped units and `1/(1−rate)` for kept ones (all ones in eval
/// mode or at rate 0).
pub fn dropout<T: Real>(
    x: &Tensor<T>,
    rate: f32,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), Tensor::filled(x.shape(), T::one())));
    }
    let keep_scale = T::from_f64(1.0 / (1.0 - rate as f64));
    let mask_data: Vec<T> = (0..x.len())
        .map(|_| {
            if rng.next_f32() >= rate {
                keep_scale
            } else {
                T::zero()
            }
        })
        .collect();
    let mask = Tensor::new(x.shape(), mask_data)?;
    let out = x.zip_map(&mask, "dropout", |v, m| v * m)?;
    Ok((out, mask))
}

/// Row-wise `x − logsumexp(x)` with max subtraction.
pub fn log_softmax<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    let width = x.cols();
    for row in out.data_mut().chunks_exact_mut(width) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum = row.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
        let lse = max + sum.ln();
        for v in row.iter_mut() {
            *v = *v - lse;
        }
    }
    out
}

/// Gradient of log-softmax given its output: `u − softmax · Σu` per row.
pub fn log_softmax_backward<T: Real>(upstream: &Tensor<T>, logp: &Tensor<T>) -> Result<Tensor<T>> {
    if upstream.shape() != logp.shape() {
        return Err(Error::shape(
            "log_softmax_backward",
            upstream.shape(),
            logp.shape(),
        ));
    }
    let width = logp.cols();
    let mut out = upstream.clone();
    for (row, lp) in out
        .data_mut()
        .chunks_exact_mut(width)
        .zip(logp.data().chunks_exact(width))
    {
        let total = row.iter().fold(T::zero(), |s, &v| s + v);
        for (g, &l) in row.iter_mut().zip(lp) {
            *g = *g - l.exp() * total;
        }
    }
    Ok(out)
}

/// Row-wise argmax; ties go to the lowest index.
pub fn predict<T: Real>(logp: &Tensor<T>) -> Vec<usize> {
    logp.data()
        .chunks_exact(logp.cols())
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor<f64> {
        Tensor::vector(data.to_vec())
    }

    #[test]
    fn gate_forward_examples() {
        let g = gate_forward(&v(&[1.0, 0.0, 2.0]), &v(&[0.0, 7.0, 10.0])).unwrap();
        assert_eq!(g.data()[0], 0.5);
        assert_eq!(g.data()[1], 0.0);
        // 2 / (1 + e^-10)
        let oracle = 2.0 / (1.0 + (-10.0f64).exp());
        assert!((g.data()[2] - oracle).abs() < 1e-12);
        assert!((g.data()[2] - 1.9999092).abs() < 1e-7);
    }

    #[test]
    fn gate_width_mismatch() {
        assert!(matches!(
            gate_forward(&v(&[1.0, 2.0]), &v(&[0.0])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn gate_backward_examples() {
        let (ga, gb) = gate_backward(&v(&[1.0]), &v(&[1.0]), &v(&[0.0])).unwrap();
        assert_eq!(gb.data(), &[0.25]);
        assert_eq!(ga.data(), &[0.5]);
    }

    #[test]
    fn gate_backward_matches_finite_differences() {
        let mut rng = RngStream::new(17);
        let h = 1e-4;
        for _ in 0..200 {
            let a = rng.next_f64() * 6.0 - 3.0;
            let b = rng.next_f64() * 8.0 - 4.0;
            let u = rng.next_f64() * 2.0 - 1.0;
            let f = |a: f64, b: f64| u * a / (1.0 + (-b).exp());
            let (ga, gb) = gate_backward(&v(&[u]), &v(&[a]), &v(&[b])).unwrap();
            let fd_a = (f(a + h, b) - f(a - h, b)) / (2.0 * h);
            let fd_b = (f(a, b + h) - f(a, b - h)) / (2.0 * h);
            let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(1e-8);
            assert!(rel(ga.data()[0], fd_a) < 1e-6);
            assert!(rel(gb.data()[0], fd_b) < 1e-6, "{} vs {fd_b}", gb.data()[0]);
        }
    }

    #[test]
    fn gate_bias_grad_sums_over_rows() {
        let a = Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap();
        let up = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let (_, gb) = gate_backward(&up, &a, &v(&[0.0])).unwrap();
        assert_eq!(gb.data(), &[1.0]);
    }

    #[test]
    fn relu_examples() {
        let x = v(&[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&relu(&x)), relu(&x));
    }

    #[test]
    fn relu_backward_matches_finite_differences_away_from_kink() {
        let x = v(&[-1.3, 0.4, 2.0, -0.2]);
        let up = v(&[0.7, -1.1, 0.3, 2.0]);
        let g = relu_backward(&up, &x).unwrap();
        let h = 1e-4;
        for i in 0..4 {
            let f = |d: f64| {
                let mut xs = x.clone();
                xs.data_mut()[i] += d;
                relu(&xs)
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            assert!((g.data()[i] - fd).abs() < 1e-9);
        }
    }

    #[test]
    fn dropout_eval_and_zero_rate_are_identity() {
        let x = Tensor::<f32>::vector(vec![1.0, -2.0, 3.0]);
        let mut rng = RngStream::new(0);
        let (y, mask) = dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.data().iter().all(|&m| m == 1.0));
        let (y, mask) = dropout(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.data().iter().all(|&m| m == 1.0));
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let x = Tensor::<f32>::filled(&[100_000], 1.0);
        let (y, mask) = dropout(&x, 0.5, Mode::Train, &mut RngStream::new(12)).unwrap();
        let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / 1e5;
        assert!((0.99..=1.01).contains(&mean), "{mean}");
        assert!(mask.data().iter().all(|&m| m == 0.0 || m == 2.0));
    }

    #[test]
    fn log_softmax_examples() {
        let uniform = log_softmax(&Tensor::<f64>::filled(&[1, 10], 0.3));
        for &v in uniform.data() {
            assert!((v + 10f64.ln()).abs() < 1e-12);
        }
        let x = v(&[1.0, 2.0, 3.0]);
        let lp = log_softmax(&x);
        let expected = [-2.40760596, -1.40760596, -0.40760596];
        for (a, b) in lp.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-8);
        }
        let shifted = log_softmax(&x.map(|v| v + 100.0));
        for (a, b) in lp.data().iter().zip(shifted.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_is_stable_for_large_inputs() {
        let lp = log_softmax(&Tensor::<f32>::vector(vec![1000.0, 0.0, -1000.0]));
        assert!(lp.all_finite());
        assert_eq!(lp.data()[0], 0.0);
    }

    #[test]
    fn log_softmax_backward_matches_finite_differences() {
        let x = v(&[0.3, -1.2, 2.5, 0.0]);
        let up = v(&[1.0, -0.5, 0.25, 2.0]);
        let g = log_softmax_backward(&up, &log_softmax(&x)).unwrap();
        let h = 1e-5;
        for i in 0..4 {
            let f = |d: f64| {
                let mut xs = x.clone();
                xs.data_mut()[i] += d;
                log_softmax(&xs)
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            assert!((g.data()[i] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn predict_examples() {
        let mut row = vec![-3.0f32; 10];
        row[0] = -1.0;
        row[1] = -0.5;
        row[2] = -2.0;
        assert_eq!(predict(&Tensor::matrix(1, 10, row).unwrap()), vec![1]);
        assert_eq!(predict(&Tensor::<f32>::filled(&[2, 10], -2.3)), vec![0, 0]);
    }

    #[test]
    fn predict_agrees_with_scan_oracle() {
        let mut rng = RngStream::new(99);
        let rows = 10_000;
        // coarse values so ties actually occur
        let data: Vec<f32> = (0..rows * 10).map(|_| rng.below(8) as f32).collect();
        let t = Tensor::matrix(rows, 10, data).unwrap();
        let preds = predict(&t);
        for (r, &p) in preds.iter().enumerate() {
            let row = t.row(r);
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let oracle = (0..10).find(|&i| row[i] == max).unwrap();
            assert_eq!(p, oracle);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gate_attenuates_and_keeps_sign(a in -1e3f64..1e3, b in -30f64..30.0) {
                let g = gate_forward(&v(&[a]), &v(&[b])).unwrap().data()[0];
                prop_assert!(g.abs() <= a.abs());
                prop_assert!(g == 0.0 || g.signum() == a.signum());
            }

            #[test]
            fn gate_increases_with_bias(a in 1e-3f64..1e3, b in -20f64..20.0, d in 1e-3f64..5.0) {
                let lo = gate_forward(&v(&[a]), &v(&[b])).unwrap().data()[0];
                let hi = gate_forward(&v(&[a]), &v(&[b + d])).unwrap().data()[0];
                prop_assert!(hi > lo);
            }

            #[test]
            fn log_softmax_rows_normalize(xs in proptest::collection::vec(-50f32..50.0, 1..20)) {
                let lp = log_softmax(&Tensor::vector(xs));
                let total: f64 = lp.data().iter().map(|&v| (v as f64).exp()).sum();
                prop_assert!((total.ln()).abs() < 1e-5);
            }
        }
    }
}
