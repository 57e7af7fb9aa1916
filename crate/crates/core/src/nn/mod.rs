//! Dense/conv1d/maxpool building blocks with hand-derived gradients and Adam.
//!
//! Activations are carried as feature-major [`Batch`]es: feature `f` of
//! sample `b` lives at `f * batch + b`. Kernels accumulate every output
//! element over its inputs in plain sequential order, so a batch of one
//! reproduces the textbook nested loop bit for bit, while wider batches
//! vectorize across samples.
//!
//! Layers are generic over [`Scalar`]; models train in `f32` and are cast to
//! `f64` for gradient verification.

mod activation;
mod adam;
mod conv;
mod dense;
mod pool;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, NumCast};
use rand::Rng;
use thiserror::Error;

pub use activation::{
    cross_entropy, relu, relu_backward_in_place, relu_in_place, softmax, softmax_cross_entropy_batch, PROB_FLOOR,
};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{Conv1dLayer, Padding};
pub use dense::DenseLayer;
pub use pool::{maxpool1d, maxpool1d_backward, maxpool1d_batch};

pub trait Scalar:
    Float + NumCast + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + DivAssign + Sum + 'static
{
}

impl<T> Scalar for T where
    T: Float + NumCast + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + DivAssign + Sum + 'static
{
}

/// Converts an `f64` literal or value into `T`.
pub fn scalar<T: Scalar>(x: f64) -> T {
    <T as NumCast>::from(x).expect("value representable in target float type")
}

pub(crate) fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("float converts to f64")
}

pub(crate) fn cast_vec<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
    v.iter().map(|&x| scalar(to_f64(x))).collect()
}

/// Eight-lane dot product; reassociates the sum so the compiler can vectorize.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail: T = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(&x, &y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for k in 0..8 {
            lanes[k] += ca[k] * cb[k];
        }
    }
    lanes.iter().copied().sum::<T>() + tail
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("{what}: expected {expected}, got {found}")]
    Mismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), ShapeError> {
    if expected == found {
        Ok(())
    } else {
        Err(ShapeError::Mismatch { what, expected, found })
    }
}

/// Feature-major activations for a batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    data: Vec<T>,
    features: usize,
    size: usize,
}

impl<T: Scalar> Batch<T> {
    pub fn zeros(features: usize, size: usize) -> Self {
        Self {
            data: vec![T::zero(); features * size],
            features,
            size,
        }
    }

    /// Wraps feature-major data.
    pub fn from_raw(data: Vec<T>, features: usize, size: usize) -> Self {
        assert_eq!(data.len(), features * size, "batch buffer size");
        Self { data, features, size }
    }

    /// Transposes sample vectors (all of length `features`) into a batch.
    pub fn from_samples<S: AsRef<[f32]>>(samples: &[S], features: usize) -> Self {
        let size = samples.len();
        let mut data = vec![T::zero(); features * size];
        for (b, s) in samples.iter().enumerate() {
            let s = s.as_ref();
            assert_eq!(s.len(), features, "sample length");
            for (f, &v) in s.iter().enumerate() {
                data[f * size + b] = scalar(v as f64);
            }
        }
        Self { data, features, size }
    }

    pub fn from_sample(x: &[T]) -> Self {
        Self {
            data: x.to_vec(),
            features: x.len(),
            size: 1,
        }
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn size(&self) -> usize {
        self.size
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

    pub fn get(&self, feature: usize, sample: usize) -> T {
        self.data[feature * self.size + sample]
    }

    pub fn row(&self, feature: usize) -> &[T] {
        &self.data[feature * self.size..(feature + 1) * self.size]
    }

    pub fn row_mut(&mut self, feature: usize) -> &mut [T] {
        &mut self.data[feature * self.size..(feature + 1) * self.size]
    }

    pub fn sample(&self, b: usize) -> Vec<T> {
        (0..self.features).map(|f| self.get(f, b)).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Batch<U> {
        Batch {
            data: cast_vec(&self.data),
            features: self.features,
            size: self.size,
        }
    }
}

/// Flat access to every trainable tensor of a model, in a fixed order.
///
/// Gradients are stored in a value of the same type as the model, so the
/// optimizer can walk parameters and gradients in lockstep.
pub trait Parameters<T: Scalar> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Glorot-uniform samples in `[-sqrt(6/(fan_in+fan_out)), +sqrt(...))`.
pub fn glorot_uniform<T: Scalar, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, count: usize) -> Vec<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..count).map(|_| scalar(rng.random_range(-limit..limit))).collect()
}
