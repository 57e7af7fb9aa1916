use rand::Rng;

use super::{axpy, cast_vec, check_len, dot, glorot_uniform, Batch, Parameters, Scalar, ShapeError};

/// Input features per cache block in the batched kernels.
const BLOCK: usize = 64;

/// Fully connected layer `y = W x + b`, `W` stored row-major `[out_dim x in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    weights: Vec<T>,
    bias: Vec<T>,
    in_dim: usize,
    out_dim: usize,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self, ShapeError> {
        if in_dim == 0 || out_dim == 0 {
            return Err(ShapeError::Config(format!(
                "dense layer dims must be positive ({in_dim} -> {out_dim})"
            )));
        }
        check_len("dense weights", in_dim * out_dim, weights.len())?;
        check_len("dense bias", out_dim, bias.len())?;
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(ShapeError::NonFinite("dense parameters"));
        }
        Ok(Self {
            weights,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weights: glorot_uniform(rng, in_dim, out_dim, in_dim * out_dim),
            bias: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn weight(&self, out: usize, input: usize) -> T {
        self.weights[out * self.in_dim + input]
    }

    /// Single-vector forward pass.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, ShapeError> {
        check_len("dense input", self.in_dim, x.len())?;
        Ok(self.forward_batch(&Batch::from_sample(x)).into_data())
    }

    pub fn forward_batch(&self, x: &Batch<T>) -> Batch<T> {
        assert_eq!(x.features(), self.in_dim, "dense input features");
        let n = x.size();
        let mut y = Batch::zeros(self.out_dim, n);
        // Input blocks stay cache-resident; each output still accumulates
        // its inputs in ascending order.
        for start in (0..self.in_dim).step_by(BLOCK) {
            let end = (start + BLOCK).min(self.in_dim);
            for o in 0..self.out_dim {
                let w = &self.weights[o * self.in_dim + start..o * self.in_dim + end];
                let out = y.row_mut(o);
                for (i, &wi) in (start..end).zip(w) {
                    axpy(wi, x.row(i), out);
                }
            }
        }
        for o in 0..self.out_dim {
            let b = self.bias[o];
            for v in y.row_mut(o).iter_mut() {
                *v += b;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grads`; returns the input
    /// gradient when `want_input_grad` is set.
    pub fn backward_batch(
        &self,
        x: &Batch<T>,
        grad_out: &Batch<T>,
        grads: &mut DenseLayer<T>,
        want_input_grad: bool,
    ) -> Option<Batch<T>> {
        assert_eq!(grad_out.features(), self.out_dim, "dense grad features");
        assert_eq!(grad_out.size(), x.size(), "dense grad batch");
        for o in 0..self.out_dim {
            grads.bias[o] += grad_out.row(o).iter().copied().sum::<T>();
        }
        for start in (0..self.in_dim).step_by(BLOCK) {
            let end = (start + BLOCK).min(self.in_dim);
            for o in 0..self.out_dim {
                let g = grad_out.row(o);
                let gw = &mut grads.weights[o * self.in_dim + start..o * self.in_dim + end];
                for (i, gwi) in (start..end).zip(gw) {
                    *gwi += dot(g, x.row(i));
                }
            }
        }
        if !want_input_grad {
            return None;
        }
        let mut dx = Batch::zeros(self.in_dim, x.size());
        for start in (0..self.in_dim).step_by(BLOCK) {
            let end = (start + BLOCK).min(self.in_dim);
            for o in 0..self.out_dim {
                let g = grad_out.row(o);
                let w = &self.weights[o * self.in_dim + start..o * self.in_dim + end];
                for (i, &wi) in (start..end).zip(w) {
                    axpy(wi, g, dx.row_mut(i));
                }
            }
        }
        Some(dx)
    }

    pub fn cast<U: Scalar>(&self) -> DenseLayer<U> {
        DenseLayer {
            weights: cast_vec(&self.weights),
            bias: cast_vec(&self.bias),
            in_dim: self.in_dim,
            out_dim: self.out_dim,
        }
    }
}

impl<T: Scalar> Parameters<T> for DenseLayer<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![&self.weights, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.weights, &mut self.bias]
    }
}
