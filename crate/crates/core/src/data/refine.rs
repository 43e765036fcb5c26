//! Optional intra-media refinement: a one-hidden-layer softmax classifier per
//! modality whose hidden activations replace the raw features.

use rand::Rng as _;

use crate::data::{CrossMediaDataset, Modality};
use crate::error::{Error, Result};
use crate::nn::layer::{Activation, DenseLayer};
use crate::nn::matrix::Matrix;
use crate::nn::rng::SeededRng;
use crate::nn::sgd::{sgd_step_layer, SgdConfig};

pub struct RefineOutcome {
    /// Refined features for every sample of the modality, pair_id order.
    pub features: Vec<Vec<f64>>,
    pub loss_history: Vec<f64>,
    pub train_accuracy: f64,
}

/// Softmax cross-entropy over class logits, averaged over the batch; returns
/// the loss and dLoss/dLogits.
fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss -= (exps[labels[r]] / sum).max(crate::losses::PROB_FLOOR).ln();
        let g = grad.row_mut(r);
        for c in 0..row.len() {
            let p = exps[c] / sum;
            g[c] = (p - if c == labels[r] { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss / n, grad)
}

/// Trains the classifier on the train split and returns hidden activations
/// for all samples of the modality.
pub fn intra_modality_refine(
    dataset: &CrossMediaDataset,
    modality: Modality,
    hidden_dim: usize,
    config: &SgdConfig,
    rng: &mut SeededRng,
) -> Result<RefineOutcome> {
    config.validate()?;
    let samples = match modality {
        Modality::Image => &dataset.images,
        Modality::Text => &dataset.texts,
    };
    let in_dim = samples.first().map_or(0, |s| s.features.len());
    let mut hidden = DenseLayer::init(in_dim, hidden_dim, Activation::Relu, rng);
    let mut head = DenseLayer::init(hidden_dim, dataset.class_count, Activation::Identity, rng);

    let train = &dataset.splits.train;
    let mut loss_history = Vec::with_capacity(config.max_iterations);
    for iteration in 0..config.max_iterations {
        let batch_docs: Vec<usize> = (0..config.batch_size)
            .map(|_| train[rng.gen_range(0..train.len())])
            .collect();
        let batch = Matrix::stack_rows(
            batch_docs.iter().map(|&d| samples[d].features.as_slice()),
            in_dim,
        );
        let labels: Vec<usize> = batch_docs.iter().map(|&d| samples[d].label).collect();
        let hidden_cache = hidden.forward_cached(&batch)?;
        let head_cache = head.forward_cached(&hidden_cache.output)?;
        let (loss, grad_logits) = softmax_cross_entropy(&head_cache.output, &labels);
        if !loss.is_finite() {
            return Err(Error::Training {
                stage: format!("refine-{}", modality.tag()),
                iteration,
                message: format!("non-finite loss {loss}"),
            });
        }
        loss_history.push(loss);
        let head_grads = head.backward(&head_cache, &grad_logits)?;
        let hidden_grads = hidden.backward(&hidden_cache, &head_grads.input_grad)?;
        sgd_step_layer(&mut head, &head_grads, config)?;
        sgd_step_layer(&mut hidden, &hidden_grads, config)?;
    }

    // refined features for every sample, plus train accuracy of the head
    let all = Matrix::stack_rows(samples.iter().map(|s| s.features.as_slice()), in_dim);
    let refined = hidden.forward(&all)?;
    let features: Vec<Vec<f64>> = (0..refined.rows())
        .map(|r| refined.row(r).to_vec())
        .collect();

    let mut correct = 0usize;
    for &d in train {
        let h = Matrix::from_vec(1, hidden_dim, features[d].clone())?;
        let logits = head.forward(&h)?;
        let predicted = (0..dataset.class_count)
            .max_by(|&a, &b| logits.get(0, a).partial_cmp(&logits.get(0, b)).unwrap())
            .unwrap();
        if predicted == samples[d].label {
            correct += 1;
        }
    }
    Ok(RefineOutcome {
        features,
        loss_history,
        train_accuracy: correct as f64 / train.len().max(1) as f64,
    })
}
