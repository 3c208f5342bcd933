//! Dense tensors: a shape vector plus flat row-major storage.

use rand::Rng;

use crate::error::TensorError;
use crate::real::Real;

/// Variance epsilon used by row normalization, shared by forward and backward.
pub const LN_EPS: f64 = 1e-5;

/// A dense tensor. Constructors enforce `data.len() == shape.iter().product()`
/// and reject non-finite values, so any `Tensor` in hand satisfies both.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel != data.len() {
            return Err(TensorError::BadShape {
                op: "from_vec",
                detail: format!("shape {:?} does not describe {} values", shape, data.len()),
            });
        }
        check_finite("from_vec", &data)?;
        Ok(Self { shape, data })
    }

    /// Internal constructor for values already validated by the caller.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![T::zero(); numel])
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        assert!(v.is_finite(), "tensor fill value must be finite");
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![v; numel])
    }

    pub fn scalar(v: T) -> Self {
        assert!(v.is_finite(), "tensor scalar must be finite");
        Self::from_parts(vec![1], vec![v])
    }

    /// I.i.d. uniform draws from `[lo, hi)`. Sampling happens in `f64` and is
    /// narrowed afterwards, so a given seed initializes `f32` and `f64`
    /// models from the same underlying draw sequence.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::of(rng.gen::<f64>() * (hi - lo) + lo))
            .collect();
        Self::from_parts(shape.to_vec(), data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensors have rank >= 1")
    }

    /// Number of rows when the tensor is viewed as `rows x last_dim`.
    pub fn rows(&self) -> usize {
        self.numel() / self.last_dim()
    }
}

/// Per-row mean and `sqrt(population variance + LN_EPS)` over the last axis.
pub fn layer_norm_stats<T: Real>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let d = x.last_dim();
    let rows = x.rows();
    let dn = T::of(d as f64);
    let eps = T::of(LN_EPS);
    let mut mu = Vec::with_capacity(rows);
    let mut sigma = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let m = row.iter().copied().sum::<T>() / dn;
        let var = row
            .iter()
            .map(|&v| (v - m) * (v - m))
            .sum::<T>()
            / dn;
        mu.push(m);
        sigma.push((var + eps).sqrt());
    }
    (mu, sigma)
}

pub(crate) fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<(), TensorError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}
