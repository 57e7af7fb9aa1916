use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{axpy, cast_vec, check_len, dot, glorot_uniform, Batch, Parameters, Scalar, ShapeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output length `ceil(length / stride)`; zero padding split with the
    /// smaller half on the left.
    Same,
    /// No padding; output length `(length - width) / stride + 1`.
    Valid,
}

/// 1-D cross-correlation. Kernels are `[filters x in_channels x width]`,
/// inputs `[in_channels x length]`, outputs `[filters x out_length]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dLayer<T> {
    kernels: Vec<T>,
    bias: Vec<T>,
    filters: usize,
    in_channels: usize,
    width: usize,
    stride: usize,
    padding: Padding,
}

impl<T: Scalar> Conv1dLayer<T> {
    pub fn new(
        filters: usize,
        in_channels: usize,
        width: usize,
        stride: usize,
        padding: Padding,
        kernels: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self, ShapeError> {
        if filters == 0 || in_channels == 0 || width == 0 || stride == 0 {
            return Err(ShapeError::Config(format!(
                "conv1d needs positive filters/channels/width/stride, got {filters}/{in_channels}/{width}/{stride}"
            )));
        }
        check_len("conv kernels", filters * in_channels * width, kernels.len())?;
        check_len("conv bias", filters, bias.len())?;
        if kernels.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(ShapeError::NonFinite("conv parameters"));
        }
        Ok(Self {
            kernels,
            bias,
            filters,
            in_channels,
            width,
            stride,
            padding,
        })
    }

    pub fn zeros(filters: usize, in_channels: usize, width: usize, padding: Padding) -> Self {
        Self {
            kernels: vec![T::zero(); filters * in_channels * width],
            bias: vec![T::zero(); filters],
            filters,
            in_channels,
            width,
            stride: 1,
            padding,
        }
    }

    /// Glorot-uniform kernels (fan_in = channels*width, fan_out = filters*width), stride 1.
    pub fn glorot<R: Rng>(filters: usize, in_channels: usize, width: usize, padding: Padding, rng: &mut R) -> Self {
        Self {
            kernels: glorot_uniform(rng, in_channels * width, filters * width, filters * in_channels * width),
            bias: vec![T::zero(); filters],
            filters,
            in_channels,
            width,
            stride: 1,
            padding,
        }
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    pub fn kernels(&self) -> &[T] {
        &self.kernels
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn kernel(&self, filter: usize, channel: usize, tap: usize) -> T {
        self.kernels[(filter * self.in_channels + channel) * self.width + tap]
    }

    pub fn out_len(&self, length: usize) -> Result<usize, ShapeError> {
        match self.padding {
            Padding::Same if length > 0 => Ok(length.div_ceil(self.stride)),
            Padding::Valid if length >= self.width => Ok((length - self.width) / self.stride + 1),
            _ => Err(ShapeError::Mismatch {
                what: "conv input length (at least kernel width)",
                expected: self.width,
                found: length,
            }),
        }
    }

    fn pad_left(&self, length: usize, out_len: usize) -> usize {
        match self.padding {
            Padding::Valid => 0,
            Padding::Same => ((out_len - 1) * self.stride + self.width).saturating_sub(length) / 2,
        }
    }

    /// Input position read by output `t` at tap `k`, if inside the signal.
    #[inline]
    fn source(&self, t: usize, k: usize, pad: usize, length: usize) -> Option<usize> {
        (t * self.stride + k).checked_sub(pad).filter(|&s| s < length)
    }

    /// Single-sample forward; `x` is `[in_channels x length]` row-major.
    pub fn forward(&self, x: &[T], length: usize) -> Result<Vec<T>, ShapeError> {
        check_len("conv input", self.in_channels * length, x.len())?;
        self.out_len(length)?;
        Ok(self.forward_batch(&Batch::from_sample(x), length).into_data())
    }

    pub fn forward_batch(&self, x: &Batch<T>, length: usize) -> Batch<T> {
        assert_eq!(x.features(), self.in_channels * length, "conv input features");
        let out_len = self.out_len(length).expect("conv input length");
        let pad = self.pad_left(length, out_len);
        let mut y = Batch::zeros(self.filters * out_len, x.size());
        for f in 0..self.filters {
            for t in 0..out_len {
                let out = y.row_mut(f * out_len + t);
                for c in 0..self.in_channels {
                    for k in 0..self.width {
                        if let Some(s) = self.source(t, k, pad, length) {
                            axpy(self.kernel(f, c, k), x.row(c * length + s), out);
                        }
                    }
                }
                let b = self.bias[f];
                for v in out.iter_mut() {
                    *v += b;
                }
            }
        }
        y
    }

    pub fn backward_batch(
        &self,
        x: &Batch<T>,
        length: usize,
        grad_out: &Batch<T>,
        grads: &mut Conv1dLayer<T>,
        want_input_grad: bool,
    ) -> Option<Batch<T>> {
        let out_len = self.out_len(length).expect("conv input length");
        assert_eq!(grad_out.features(), self.filters * out_len, "conv grad features");
        let pad = self.pad_left(length, out_len);
        let mut dx = want_input_grad.then(|| Batch::zeros(self.in_channels * length, x.size()));
        for f in 0..self.filters {
            for t in 0..out_len {
                let g = grad_out.row(f * out_len + t);
                grads.bias[f] += g.iter().copied().sum::<T>();
                for c in 0..self.in_channels {
                    for k in 0..self.width {
                        if let Some(s) = self.source(t, k, pad, length) {
                            let idx = (f * self.in_channels + c) * self.width + k;
                            grads.kernels[idx] += dot(g, x.row(c * length + s));
                            if let Some(dx) = dx.as_mut() {
                                axpy(self.kernels[idx], g, dx.row_mut(c * length + s));
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn cast<U: Scalar>(&self) -> Conv1dLayer<U> {
        Conv1dLayer {
            kernels: cast_vec(&self.kernels),
            bias: cast_vec(&self.bias),
            filters: self.filters,
            in_channels: self.in_channels,
            width: self.width,
            stride: self.stride,
            padding: self.padding,
        }
    }
}

impl<T: Scalar> Parameters<T> for Conv1dLayer<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![&self.kernels, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.kernels, &mut self.bias]
    }
}
