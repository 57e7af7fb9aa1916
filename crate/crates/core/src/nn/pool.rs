use super::{check_len, Batch, Scalar, ShapeError};

fn check_window(window: usize, length: usize) -> Result<usize, ShapeError> {
    if window == 0 {
        return Err(ShapeError::Config("pool window must be at least 1".into()));
    }
    if window > length {
        return Err(ShapeError::Mismatch {
            what: "maxpool input length (at least window)",
            expected: window,
            found: length,
        });
    }
    Ok(length / window)
}

/// Non-overlapping window maxima over `[channels x length]`; a trailing
/// remainder shorter than `window` is dropped.
pub fn maxpool1d<T: Scalar>(x: &[T], channels: usize, window: usize) -> Result<Vec<T>, ShapeError> {
    if channels == 0 {
        return Err(ShapeError::Config("maxpool needs at least one channel".into()));
    }
    let length = x.len() / channels;
    check_len("maxpool input", channels * length, x.len())?;
    check_window(window, length)?;
    Ok(maxpool1d_batch(&Batch::from_sample(x), channels, length, window)
        .0
        .into_data())
}

/// Batched max pooling. Also returns, for every output element
/// (feature-major like the batch), the input feature that won. Ties go to
/// the lowest index.
pub fn maxpool1d_batch<T: Scalar>(x: &Batch<T>, channels: usize, length: usize, window: usize) -> (Batch<T>, Vec<u32>) {
    assert_eq!(x.features(), channels * length, "maxpool input features");
    let out_len = check_window(window, length).expect("maxpool window");
    let n = x.size();
    let mut y = Batch::zeros(channels * out_len, n);
    let mut argmax = vec![0u32; channels * out_len * n];
    for c in 0..channels {
        for j in 0..out_len {
            let o = c * out_len + j;
            let first = c * length + j * window;
            y.row_mut(o).copy_from_slice(x.row(first));
            let winners = &mut argmax[o * n..(o + 1) * n];
            winners.fill(first as u32);
            for k in 1..window {
                let src = first + k;
                let row = x.row(src);
                let out = y.row_mut(o);
                for b in 0..n {
                    if row[b] > out[b] {
                        out[b] = row[b];
                        winners[b] = src as u32;
                    }
                }
            }
        }
    }
    (y, argmax)
}

/// Routes each output gradient to the input element that won its window.
pub fn maxpool1d_backward<T: Scalar>(grad_out: &Batch<T>, argmax: &[u32], in_features: usize) -> Batch<T> {
    let n = grad_out.size();
    assert_eq!(argmax.len(), grad_out.features() * n, "argmax size");
    let mut dx = Batch::zeros(in_features, n);
    let data = dx.data_mut();
    for (idx, (&g, &src)) in grad_out.data().iter().zip(argmax).enumerate() {
        let b = idx % n;
        data[src as usize * n + b] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn simple_cases() {
        assert_eq!(maxpool1d(&[1.0f32, 3.0, 2.0, 5.0], 1, 2).unwrap(), vec![3.0, 5.0]);
        assert_eq!(maxpool1d(&[2.0f32; 7], 1, 3).unwrap(), vec![2.0, 2.0]);
        assert!(maxpool1d(&[1.0f32, 2.0], 1, 3).is_err());
        assert!(maxpool1d(&[1.0f32, 2.0], 1, 0).is_err());
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for &(channels, length) in &[(1usize, 10usize), (3, 14), (2, 9)] {
            let x: Vec<f32> = (0..channels * length).map(|_| rng.random_range(-5.0..5.0)).collect();
            let got = maxpool1d(&x, channels, 3).unwrap();
            let mut want = Vec::new();
            for c in 0..channels {
                for j in 0..length / 3 {
                    let mut m = f32::NEG_INFINITY;
                    for k in 0..3 {
                        m = m.max(x[c * length + j * 3 + k]);
                    }
                    want.push(m);
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn ties_route_to_first_index() {
        let x = Batch::from_sample(&[4.0f64, 4.0, 4.0, 4.0]);
        let (y, argmax) = maxpool1d_batch(&x, 1, 4, 2);
        assert_eq!(y.data(), &[4.0, 4.0]);
        assert_eq!(argmax, vec![0, 2]);
        let dx = maxpool1d_backward(&Batch::from_sample(&[1.0, 1.0]), &argmax, 4);
        assert_eq!(dx.data(), &[1.0, 0.0, 1.0, 0.0]);
    }
}
