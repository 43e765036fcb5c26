//! Dataset model, feature-file ingestion, split management, standardization,
//! the optional intra-media refiner, and the synthetic cross-modal generator.

pub mod features;
pub mod manifest;
pub mod refine;
pub mod standardize;
pub mod synth;

pub use features::{load_features, save_features};
pub use manifest::{load_dataset_from_manifest, DatasetManifest};
pub use refine::intra_modality_refine;
pub use standardize::{standardize, Standardizer};
pub use synth::{generate_synthetic, SyntheticConfig};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "image" => Some(Modality::Image),
            "text" => Some(Modality::Text),
            _ => None,
        }
    }

    pub fn opposite(self) -> Modality {
        match self {
            Modality::Image => Modality::Text,
            Modality::Text => Modality::Image,
        }
    }
}

/// One media instance. `pair_id` links the image and text halves of a
/// document; it equals the row index in the modality's feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
    pub modality: Modality,
    pub pair_id: usize,
}

/// Document-level splits: each entry is a pair_id, so both modalities of a
/// document always land in the same split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossMediaDataset {
    pub images: Vec<LabeledSample>,
    pub texts: Vec<LabeledSample>,
    pub class_count: usize,
    pub splits: Splits,
}

impl CrossMediaDataset {
    pub fn from_samples(
        images: Vec<LabeledSample>,
        texts: Vec<LabeledSample>,
        class_count: usize,
    ) -> Result<Self> {
        if images.len() != texts.len() {
            return Err(Error::Usage(format!(
                "image/text sample counts differ: {} vs {}",
                images.len(),
                texts.len()
            )));
        }
        for (i, s) in images.iter().chain(texts.iter()).enumerate() {
            if s.label >= class_count {
                return Err(Error::Usage(format!(
                    "sample {i} has label {} outside the declared class set of {class_count}",
                    s.label
                )));
            }
        }
        Ok(CrossMediaDataset {
            images,
            texts,
            class_count,
            splits: Splits::default(),
        })
    }

    pub fn doc_count(&self) -> usize {
        self.images.len()
    }

    pub fn image_dim(&self) -> usize {
        self.images.first().map_or(0, |s| s.features.len())
    }

    pub fn text_dim(&self) -> usize {
        self.texts.first().map_or(0, |s| s.features.len())
    }

    /// Document label, taken from the image half (both halves agree).
    pub fn label(&self, pair_id: usize) -> usize {
        self.images[pair_id].label
    }
}

/// Converts split fractions into explicit counts. The remainder after
/// rounding down goes to the train split.
pub fn fractions_to_counts(fractions: [f64; 3], total: usize) -> Result<[usize; 3]> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
        return Err(Error::Config(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    // small epsilon so fractions that hit an integer exactly in decimal do
    // not round down from binary representation error
    let val = (fractions[1] * total as f64 + 1e-9).floor() as usize;
    let test = (fractions[2] * total as f64 + 1e-9).floor() as usize;
    let train = total - val - test;
    Ok([train, val, test])
}

/// Randomly assigns documents to train/validation/test at the pair level.
pub fn split_dataset(
    dataset: &mut CrossMediaDataset,
    counts: [usize; 3],
    rng: &mut SeededRng,
) -> Result<()> {
    let total = dataset.doc_count();
    if counts.iter().sum::<usize>() != total {
        return Err(Error::Usage(format!(
            "split counts {counts:?} do not sum to the document count {total}"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    // Fisher-Yates
    for i in (1..total).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let train: Vec<usize> = order[..counts[0]].to_vec();
    let validation: Vec<usize> = order[counts[0]..counts[0] + counts[1]].to_vec();
    let test: Vec<usize> = order[counts[0] + counts[1]..].to_vec();

    let mut seen = vec![false; dataset.class_count];
    for &d in &train {
        seen[dataset.label(d)] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Sampling(format!(
            "class {missing} has no documents in the train split"
        )));
    }
    dataset.splits = Splits {
        train,
        validation,
        test,
    };
    Ok(())
}
