//! Seeded mini-batch training with Adam and best-validation snapshot selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Label};
use crate::metrics::{compute_eer, ScoreEntry, ScoreSet};
use crate::model::{Classifier, Examples};
use crate::nn::{softmax_cross_entropy_batch, to_f64, AdamConfig, AdamState, ShapeError};
use crate::probes::SCORE_CHUNK;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{what}: expected {expected}, got {found}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("training set needs both labels; got {bonafide} bonafide and {spoof} spoof")]
    SingleLabel { bonafide: usize, spoof: usize },
    #[error("training set is empty")]
    EmptyTrain,
    #[error("invalid training hyperparameters: {0}")]
    Hyper(String),
    #[error("parameters became non-finite during epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle_seed: u64,
    pub init_seed: u64,
}

impl Default for TrainingHyper {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            shuffle_seed: 0,
            init_seed: 0,
        }
    }
}

impl TrainingHyper {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Hyper(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// How the returned snapshot was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Lowest validation EER; equal EERs fall back to lower validation
    /// loss, then the earliest epoch.
    ValidationEer,
    /// Validation set lacks a label: lowest validation loss.
    ValidationLoss,
    /// No validation examples: final epoch.
    FinalEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training cross-entropy accumulated over each epoch's mini-batches.
    pub train_loss: Vec<f64>,
    pub val_eer: Vec<Option<f64>>,
    pub val_loss: Vec<Option<f64>>,
    /// Zero-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub selection: Selection,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn best_val_eer(&self) -> Option<f64> {
        self.val_eer.get(self.best_epoch).copied().flatten()
    }
}

struct Evaluation {
    loss: f64,
    eer: Option<f64>,
}

fn evaluate<M, E>(model: &M, examples: &E) -> Result<Option<Evaluation>, TrainError>
where
    M: Classifier<f32>,
    E: Examples<Input = M::Input> + ?Sized,
{
    if examples.is_empty() {
        return Ok(None);
    }
    let indices: Vec<usize> = (0..examples.len()).collect();
    let mut loss = 0.0;
    let mut entries = Vec::with_capacity(examples.len());
    for chunk in indices.chunks(SCORE_CHUNK) {
        let labels: Vec<usize> = chunk.iter().map(|&i| examples.label(i).index()).collect();
        let logits = model.logits(&examples.gather(chunk))?;
        let (l, probs, _) = softmax_cross_entropy_batch(&logits, &labels);
        loss += to_f64(l);
        for (b, &i) in chunk.iter().enumerate() {
            entries.push(ScoreEntry {
                clip_id: String::new(),
                label: examples.label(i),
                score: to_f64(probs.get(Label::Spoof.index(), b)),
            });
        }
    }
    let scores = ScoreSet::new(entries).map_err(|_| ShapeError::NonFinite("validation scores"))?;
    let (bona, spoof) = scores.label_counts();
    let eer = (bona > 0 && spoof > 0)
        .then(|| compute_eer(&scores).map(|r| r.eer))
        .transpose()
        .expect("both labels present");
    Ok(Some(Evaluation {
        loss: loss / examples.len() as f64,
        eer,
    }))
}

/// Trains `model` on `train`, returning the best-validation snapshot.
///
/// Each epoch shuffles the training order with a generator seeded once from
/// `shuffle_seed`; the trailing partial batch is kept. The gradient of each
/// step is the batch-mean gradient.
pub fn fit<M, E>(mut model: M, train: &E, val: &E, hyper: &TrainingHyper) -> Result<(M, TrainHistory), TrainError>
where
    M: Classifier<f32>,
    E: Examples<Input = M::Input> + ?Sized,
{
    hyper.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    let (bonafide, spoof) = train.label_counts();
    if bonafide == 0 || spoof == 0 {
        return Err(TrainError::SingleLabel { bonafide, spoof });
    }
    if !val.is_empty() && val.dims() != train.dims() {
        return Err(TrainError::DimMismatch {
            what: "validation feature dim",
            expected: train.dims()[0],
            found: val.dims()[0],
        });
    }
    let (_, val_spoof) = val.label_counts();
    let selection = if val.is_empty() {
        Selection::FinalEpoch
    } else if val_spoof == 0 || val_spoof == val.len() {
        Selection::ValidationLoss
    } else {
        Selection::ValidationEer
    };

    let mut adam = AdamState::new(&model, hyper.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.shuffle_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory {
        train_loss: Vec::with_capacity(hyper.epochs),
        val_eer: Vec::with_capacity(hyper.epochs),
        val_loss: Vec::with_capacity(hyper.epochs),
        best_epoch: 0,
        selection,
    };
    let mut best: Option<((f64, f64), M)> = None;

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let labels: Vec<usize> = chunk.iter().map(|&i| train.label(i).index()).collect();
            let step = model.backward(&train.gather(chunk), &labels, false)?;
            epoch_loss += to_f64(step.loss_sum);
            adam.step(&mut model, &step.grads)?;
        }
        if !model.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        history.train_loss.push(epoch_loss / train.len() as f64);

        let eval = evaluate(&model, val)?;
        history.val_loss.push(eval.as_ref().map(|e| e.loss));
        history.val_eer.push(eval.as_ref().and_then(|e| e.eer));
        let key = match (selection, &eval) {
            (Selection::ValidationEer, Some(e)) => (e.eer.expect("both labels in validation"), e.loss),
            (Selection::ValidationLoss, Some(e)) => (e.loss, 0.0),
            _ => (-(epoch as f64), 0.0),
        };
        if best.as_ref().is_none_or(|(k, _)| key < *k) {
            history.best_epoch = epoch;
            best = Some((key, model.clone()));
        }
    }
    let (_, snapshot) = best.expect("at least one epoch");
    Ok((snapshot, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_corpus, synthesize_corpus, SplitSpec};
    use crate::probes::{train_probe, ProbeArch, ProbeKind};

    #[test]
    fn hyper_defaults_and_validation() {
        let h = TrainingHyper::default();
        assert_eq!((h.epochs, h.batch_size), (20, 32));
        assert_eq!(h.adam(), AdamConfig::default());
        assert!(h.validate().is_ok());
        for bad in [
            TrainingHyper { epochs: 0, ..h },
            TrainingHyper { batch_size: 0, ..h },
            TrainingHyper {
                learning_rate: -1.0,
                ..h
            },
            TrainingHyper { beta2: 1.0, ..h },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn single_label_train_is_rejected() {
        let c = synthesize_corpus(4, 10, 1.0, 0).unwrap();
        let bona: Vec<usize> = (0..10).collect();
        let train = c.subset("t", crate::corpus::SplitTag::Train, &bona);
        let err = train_probe(
            ProbeKind::Fcn,
            &train,
            &c,
            &TrainingHyper::default(),
            &ProbeArch::default(),
        );
        assert!(matches!(err, Err(TrainError::SingleLabel { bonafide: 10, spoof: 0 })));
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let a = synthesize_corpus(4, 10, 1.0, 0).unwrap();
        let b = synthesize_corpus(5, 10, 1.0, 0).unwrap();
        let err = train_probe(ProbeKind::Fcn, &a, &b, &TrainingHyper::default(), &ProbeArch::default());
        assert!(matches!(err, Err(TrainError::DimMismatch { .. })));
    }

    #[test]
    fn history_bookkeeping_and_determinism() {
        let c = synthesize_corpus(8, 60, 3.0, 11).unwrap();
        let (train, val, _) = split_corpus(&c, &SplitSpec::seventy_ten_twenty(2)).unwrap();
        let hyper = TrainingHyper {
            epochs: 5,
            shuffle_seed: 3,
            init_seed: 4,
            ..TrainingHyper::default()
        };
        let arch = ProbeArch {
            hidden: 16,
            ..ProbeArch::default()
        };
        let (p1, h1) = train_probe(ProbeKind::Fcn, &train, &val, &hyper, &arch).unwrap();
        let (p2, h2) = train_probe(ProbeKind::Fcn, &train, &val, &hyper, &arch).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
        assert_eq!(h1.epochs(), 5);
        assert_eq!(h1.val_eer.len(), 5);
        let best = (h1.best_val_eer().unwrap(), h1.val_loss[h1.best_epoch].unwrap());
        for (e, (v, l)) in h1.val_eer.iter().zip(&h1.val_loss).enumerate() {
            let key = (v.unwrap(), l.unwrap());
            assert!(best <= key);
            if e < h1.best_epoch {
                assert!(key > best);
            }
        }
    }
}
