use std::fmt::{Debug, Display};

use num_traits::Float;

use super::RngStream;
use crate::error::{Error, Result};

/// Scalar types the numeric core is generic over.
///
/// Model math runs in `f32`; the `f64` instantiation backs the gradient
/// checker.
pub trait Real: Float + Default + Debug + Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major array of rank 1 or 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::Argument(format!(
                "tensor rank must be 1 or 2, got shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("tensor construction", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        assert!(
            !shape.is_empty() && shape.len() <= 2,
            "tensor rank must be 1 or 2"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows; a rank-1 tensor is a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Row width; for rank 1 this is the length.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Adds `bias` to every row.
    pub fn add_row(&mut self, bias: &Tensor<T>) -> Result<()> {
        if bias.len() != self.cols() {
            return Err(Error::shape("row broadcast", &self.shape, &bias.shape));
        }
        let c = self.cols();
        for row in self.data.chunks_exact_mut(c) {
            for (v, &b) in row.iter_mut().zip(&bias.data) {
                *v = *v + b;
            }
        }
        Ok(())
    }

    /// Column sums, accumulated top to bottom.
    pub fn sum_rows(&self) -> Tensor<T> {
        let c = self.cols();
        let mut out = vec![T::zero(); c];
        for row in self.data.chunks_exact(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = *o + v;
            }
        }
        Tensor::vector(out)
    }
}

fn require_rank2<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::shape(op, &a.shape, &b.shape));
    }
    Ok(())
}

/// `a · b` for `a: m×k`, `b: k×n`.
///
/// The inner loop runs along rows of `b` (i-k-j order); each output row depends
/// only on the matching row of `a`, summed over `k` in ascending order.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    require_rank2("matmul", a, b)?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::shape("matmul", &a.shape, &b.shape));
    }
    let mut out = vec![T::zero(); m * n];
    for (a_row, out_row) in a
        .data
        .chunks_exact(k.max(1))
        .zip(out.chunks_exact_mut(n.max(1)))
    {
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// `aᵀ · b` for `a: r×m`, `b: r×n`; accumulates over `r` in ascending order.
pub fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    require_rank2("matmul_tn", a, b)?;
    let (r, m) = (a.shape[0], a.shape[1]);
    let (r2, n) = (b.shape[0], b.shape[1]);
    if r != r2 {
        return Err(Error::shape("matmul_tn", &a.shape, &b.shape));
    }
    let mut out = vec![T::zero(); m * n];
    for s in 0..r {
        let a_row = &a.data[s * m..(s + 1) * m];
        let b_row = &b.data[s * n..(s + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`; each entry is a dot product over `k` in
/// ascending order.
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    require_rank2("matmul_nt", a, b)?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (n, k2) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::shape("matmul_nt", &a.shape, &b.shape));
    }
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b.data[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(&[m, n], out)
}

pub fn elementwise<T: Real>(map: impl Fn(T) -> T, x: &Tensor<T>) -> Tensor<T> {
    x.map(map)
}

/// I.i.d. draws from `[lo, hi)`.
pub fn uniform_init(rng: &mut RngStream, shape: &[usize], lo: f32, hi: f32) -> Result<Tensor> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::Argument(format!(
            "uniform_init requires finite lo < hi, got [{lo}, {hi})"
        )));
    }
    let n = shape.iter().product();
    let (lo64, span) = (lo as f64, hi as f64 - lo as f64);
    let data = (0..n)
        .map(|_| {
            let v = (lo64 + span * rng.next_f64()) as f32;
            // rounding to f32 can land exactly on hi
            if v >= hi {
                hi.next_down()
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f32]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_left() {
        let b = m(2, 2, &[3., 4., 5., 6.]);
        assert_eq!(matmul(&Tensor::identity(2), &b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_product() {
        let a = m(2, 2, &[1., 2., 3., 4.]);
        let b = m(2, 2, &[5., 6., 7., 8.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[19., 22., 43., 50.]);
    }

    #[test]
    fn matmul_zero() {
        let b = m(2, 3, &[1., -2., 3., 4., 5., 6.]);
        let z = matmul(&Tensor::zeros(&[4, 2]), &b).unwrap();
        assert_eq!(z.shape(), &[4, 3]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::<f32>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let mut rng = RngStream::new(7);
        let a = uniform_init(&mut rng, &[5, 3], -1., 1.).unwrap();
        let b = uniform_init(&mut rng, &[5, 4], -1., 1.).unwrap();
        let c = uniform_init(&mut rng, &[4, 3], -1., 1.).unwrap();
        let at = transpose(&a);
        let ct = transpose(&c);
        let tn = matmul_tn(&a, &b).unwrap();
        let reference = matmul(&at, &b).unwrap();
        for (x, y) in tn.data().iter().zip(reference.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        let nt = matmul_nt(&a, &c).unwrap();
        let reference = matmul(&a, &ct).unwrap();
        for (x, y) in nt.data().iter().zip(reference.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    fn transpose(t: &Tensor) -> Tensor {
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        Tensor::matrix(c, r, out).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let x = Tensor::vector(vec![1.0f32, -2.0]);
        assert_eq!(elementwise(|v| -v, &x).data(), &[-1.0, 2.0]);
        assert_eq!(elementwise(|v| v, &x), x);
        let y = Tensor::vector(vec![3.0f32, 4.0]);
        assert_eq!(elementwise(|v| v * v, &y).data(), &[9.0, 16.0]);
    }

    #[test]
    fn uniform_init_mean() {
        let mut rng = RngStream::new(42);
        let t = uniform_init(&mut rng, &[10_000], 0.0, 1.0).unwrap();
        let mean: f64 = t.data().iter().map(|&v| v as f64).sum::<f64>() / 1e4;
        assert!((0.47..=0.53).contains(&mean), "mean {mean}");
        assert!(t.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn uniform_init_rejects_empty_interval() {
        let mut rng = RngStream::new(0);
        assert!(uniform_init(&mut rng, &[3], 1.0, 1.0).is_err());
        assert!(uniform_init(&mut rng, &[3], 2.0, 1.0).is_err());
    }

    #[test]
    fn uniform_init_is_deterministic() {
        let a = uniform_init(&mut RngStream::new(9), &[64, 3], -0.5, 0.5).unwrap();
        let b = uniform_init(&mut RngStream::new(9), &[64, 3], -0.5, 0.5).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn tensor_rejects_bad_length() {
        assert!(Tensor::<f32>::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(&[1, 1, 1], vec![0.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(max: usize) -> impl Strategy<Value = Tensor> {
            (1..max, 1..max).prop_flat_map(|(r, c)| {
                proptest::collection::vec(-1e3f32..1e3, r * c)
                    .prop_map(move |v| Tensor::matrix(r, c, v).unwrap())
            })
        }

        proptest! {
            #[test]
            fn identity_is_exact(a in matrix(9)) {
                let right = matmul(&a, &Tensor::identity(a.cols())).unwrap();
                let left = matmul(&Tensor::identity(a.rows()), &a).unwrap();
                prop_assert_eq!(&right, &a);
                prop_assert_eq!(&left, &a);
            }

            #[test]
            fn matmul_is_bitwise_deterministic(a in matrix(9), seed in any::<u64>()) {
                let b = uniform_init(&mut RngStream::new(seed), &[a.cols(), 5], -2.0, 2.0).unwrap();
                let x = matmul(&a, &b).unwrap();
                let y = matmul(&a, &b).unwrap();
                let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(&x), bits(&y));
                prop_assert!(x.all_finite());
            }
        }
    }
}
