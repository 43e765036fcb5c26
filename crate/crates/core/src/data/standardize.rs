//! Per-dimension standardization with statistics computed on the train split
//! only. Stands in for the DBN-based preprocessing of the source features.

use crate::data::{CrossMediaDataset, LabeledSample, Modality};
use crate::error::{Error, Result};

const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub image_mean: Vec<f64>,
    pub image_std: Vec<f64>,
    pub text_mean: Vec<f64>,
    pub text_std: Vec<f64>,
}

impl Standardizer {
    pub fn apply(&self, sample: &mut LabeledSample) {
        let (mean, std) = match sample.modality {
            Modality::Image => (&self.image_mean, &self.image_std),
            Modality::Text => (&self.text_mean, &self.text_std),
        };
        for ((v, m), s) in sample.features.iter_mut().zip(mean).zip(std) {
            *v = (*v - m) / s;
        }
    }
}

fn stats(samples: &[&LabeledSample], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(&s.features) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(&s.features).zip(&mean) {
            let d = v - m;
            *acc += d * d;
        }
    }
    let std = var
        .iter()
        .map(|v| (v / n).max(VARIANCE_FLOOR).sqrt())
        .collect();
    (mean, std)
}

/// Transforms all splits in place using train-split statistics and returns
/// the fitted statistics. Applying the returned statistics a second time
/// re-centers on already-standardized data, so this is not idempotent.
pub fn standardize(dataset: &mut CrossMediaDataset) -> Result<Standardizer> {
    if dataset.splits.train.is_empty() {
        return Err(Error::Usage(
            "standardize requires a non-empty train split".into(),
        ));
    }
    let train_images: Vec<&LabeledSample> = dataset
        .splits
        .train
        .iter()
        .map(|&d| &dataset.images[d])
        .collect();
    let train_texts: Vec<&LabeledSample> = dataset
        .splits
        .train
        .iter()
        .map(|&d| &dataset.texts[d])
        .collect();
    let (image_mean, image_std) = stats(&train_images, dataset.image_dim());
    let (text_mean, text_std) = stats(&train_texts, dataset.text_dim());
    let standardizer = Standardizer {
        image_mean,
        image_std,
        text_mean,
        text_std,
    };
    for s in dataset.images.iter_mut().chain(dataset.texts.iter_mut()) {
        standardizer.apply(s);
    }
    Ok(standardizer)
}
