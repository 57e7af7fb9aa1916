//! Interfaces shared by every trainable classifier and the data sources that feed them.

use crate::corpus::{AlignedPair, EmbeddingCorpus, Label};
use crate::nn::{softmax_cross_entropy_batch, to_f64, Batch, Parameters, Scalar, ShapeError};

/// Result of a backward pass over one mini-batch.
#[derive(Debug, Clone)]
pub struct Backward<M, I, T> {
    /// Summed (not averaged) cross-entropy over the batch.
    pub loss_sum: T,
    /// Gradients of the batch-mean loss, shaped like the model.
    pub grads: M,
    /// Gradient with respect to the model input, when requested.
    pub input_grad: Option<I>,
}

pub trait ModelInput {
    fn batch_size(&self) -> usize;
}

impl<T: Scalar> ModelInput for Batch<T> {
    fn batch_size(&self) -> usize {
        self.size()
    }
}

/// Two-view input for fusion models.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch<T> {
    pub a: Batch<T>,
    pub b: Batch<T>,
}

impl<T: Scalar> PairBatch<T> {
    pub fn cast<U: Scalar>(&self) -> PairBatch<U> {
        PairBatch {
            a: self.a.cast(),
            b: self.b.cast(),
        }
    }
}

impl<T: Scalar> ModelInput for PairBatch<T> {
    fn batch_size(&self) -> usize {
        self.a.size()
    }
}

/// A two-class softmax classifier with hand-derived gradients.
pub trait Classifier<T: Scalar>: Parameters<T> + Clone + Send + Sync {
    type Input: ModelInput;

    fn logits(&self, input: &Self::Input) -> Result<Batch<T>, ShapeError>;

    fn backward(
        &self,
        input: &Self::Input,
        labels: &[usize],
        want_input_grad: bool,
    ) -> Result<Backward<Self, Self::Input, T>, ShapeError>;

    /// Class probabilities, `[2 x batch]`.
    fn probabilities(&self, input: &Self::Input) -> Result<Batch<T>, ShapeError> {
        let logits = self.logits(input)?;
        let n = logits.size();
        let mut out = Batch::zeros(logits.features(), n);
        for b in 0..n {
            let p = crate::nn::softmax(&logits.sample(b));
            for (k, v) in p.into_iter().enumerate() {
                out.data_mut()[k * n + b] = v;
            }
        }
        Ok(out)
    }

    /// Batch-mean cross-entropy.
    fn mean_loss(&self, input: &Self::Input, labels: &[usize]) -> Result<T, ShapeError> {
        check_labels(input.batch_size(), labels)?;
        let (loss, _, _) = softmax_cross_entropy_batch(&self.logits(input)?, labels);
        Ok(loss / crate::nn::scalar(labels.len() as f64))
    }
}

pub(crate) fn check_labels(batch: usize, labels: &[usize]) -> Result<(), ShapeError> {
    if labels.len() != batch {
        return Err(ShapeError::Mismatch {
            what: "labels per batch",
            expected: batch,
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(ShapeError::Mismatch {
            what: "class index (two classes)",
            expected: 1,
            found: bad,
        });
    }
    Ok(())
}

/// Per-sample spoof-class probability as `f64`.
pub fn spoof_scores<T: Scalar, M: Classifier<T>>(model: &M, input: &M::Input) -> Result<Vec<f64>, ShapeError> {
    let probs = model.probabilities(input)?;
    Ok(probs.row(Label::Spoof.index()).iter().map(|&p| to_f64(p)).collect())
}

/// Indexed labeled examples that can be gathered into model inputs.
pub trait Examples {
    type Input: ModelInput;

    fn len(&self) -> usize;
    fn label(&self, i: usize) -> Label;
    fn clip_id(&self, i: usize) -> &str;
    fn gather(&self, indices: &[usize]) -> Self::Input;
    /// Feature width(s) the examples present, for dimension checks.
    fn dims(&self) -> Vec<usize>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label_counts(&self) -> (usize, usize) {
        let spoof = (0..self.len()).filter(|&i| self.label(i) == Label::Spoof).count();
        (self.len() - spoof, spoof)
    }
}

impl Examples for EmbeddingCorpus {
    type Input = Batch<f32>;

    fn len(&self) -> usize {
        self.records().len()
    }

    fn label(&self, i: usize) -> Label {
        self.records()[i].label
    }

    fn clip_id(&self, i: usize) -> &str {
        &self.records()[i].clip_id
    }

    fn gather(&self, indices: &[usize]) -> Batch<f32> {
        let rows: Vec<&[f32]> = indices.iter().map(|&i| self.records()[i].vector.as_slice()).collect();
        Batch::from_samples(&rows, self.dim())
    }

    fn dims(&self) -> Vec<usize> {
        vec![self.dim()]
    }
}

impl<'a> Examples for [AlignedPair<'a>] {
    type Input = PairBatch<f32>;

    fn len(&self) -> usize {
        <[AlignedPair<'a>]>::len(self)
    }

    fn label(&self, i: usize) -> Label {
        self[i].label
    }

    fn clip_id(&self, i: usize) -> &str {
        self[i].clip_id
    }

    fn gather(&self, indices: &[usize]) -> PairBatch<f32> {
        let [da, db] = pair_dims(self);
        let a: Vec<&[f32]> = indices.iter().map(|&i| self[i].a).collect();
        let b: Vec<&[f32]> = indices.iter().map(|&i| self[i].b).collect();
        PairBatch {
            a: Batch::from_samples(&a, da),
            b: Batch::from_samples(&b, db),
        }
    }

    fn dims(&self) -> Vec<usize> {
        pair_dims(self).to_vec()
    }
}

fn pair_dims(pairs: &[AlignedPair<'_>]) -> [usize; 2] {
    pairs.first().map_or([0, 0], |p| [p.a.len(), p.b.len()])
}
