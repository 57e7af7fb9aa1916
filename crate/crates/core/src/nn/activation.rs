use super::{scalar, Batch, Scalar, ShapeError};

/// Probability floor applied inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

pub fn relu_in_place<T: Scalar>(x: &mut Batch<T>) {
    for v in x.data_mut() {
        *v = v.max(T::zero());
    }
}

/// Zeroes gradient entries whose pre-activation was not positive.
pub fn relu_backward_in_place<T: Scalar>(grad: &mut Batch<T>, pre_activation: &Batch<T>) {
    for (g, &z) in grad.data_mut().iter_mut().zip(pre_activation.data()) {
        if z <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-ln(max(probs[label], 1e-12))`.
pub fn cross_entropy<T: Scalar>(probs: &[T], label: usize) -> Result<T, ShapeError> {
    let p = *probs.get(label).ok_or(ShapeError::Mismatch {
        what: "cross-entropy label index (class count)",
        expected: probs.len(),
        found: label,
    })?;
    Ok(-p.max(scalar(PROB_FLOOR)).ln())
}

/// Softmax over each sample's logits plus cross-entropy.
///
/// Returns the summed loss, the probabilities, and the gradient of the
/// batch-mean loss with respect to the logits, `(p - onehot) / batch`.
pub fn softmax_cross_entropy_batch<T: Scalar>(logits: &Batch<T>, labels: &[usize]) -> (T, Batch<T>, Batch<T>) {
    let n = logits.size();
    let classes = logits.features();
    assert_eq!(labels.len(), n, "one label per sample");
    let mut probs = Batch::zeros(classes, n);
    let mut grad = Batch::zeros(classes, n);
    let mut loss = T::zero();
    let inv_n = T::one() / scalar(n as f64);
    for (b, &label) in labels.iter().enumerate() {
        let p = softmax(&logits.sample(b));
        loss += cross_entropy(&p, label).expect("label within class range");
        for (k, &pk) in p.iter().enumerate() {
            probs.data_mut()[k * n + b] = pk;
            let target = if k == label { T::one() } else { T::zero() };
            grad.data_mut()[k * n + b] = (pk - target) * inv_n;
        }
    }
    (loss, probs, grad)
}
