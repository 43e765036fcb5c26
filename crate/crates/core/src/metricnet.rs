//! The learned cross-media similarity function: pair sampling, cross-entropy
//! training over concatenated embedding pairs, and scoring.
//!
//! The concatenation is canonically image-first for both retrieval
//! directions, so one network serves both tasks and the transpose property of
//! score matrices is exact.

use rand::Rng as _;

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::losses::{cross_entropy_over_nodes, softmax_pair};
use crate::nn::layer::{Activation, DenseLayer, LayerStack};
use crate::nn::matrix::Matrix;
use crate::nn::rng::SeededRng;
use crate::nn::sgd::{sgd_step_layer, SgdConfig};
use crate::pathway::SharedRepresentation;

const HIDDEN_DIMS: [usize; 3] = [512, 512, 512];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricNetwork {
    /// Three relu layers over the concatenated pair, then a two-node identity
    /// head; the softmax is folded into the loss and the score.
    pub hidden: LayerStack,
    pub head: DenseLayer,
}

impl MetricNetwork {
    pub fn new(embed_dim: usize, rng: &mut SeededRng) -> Self {
        Self::with_hidden_dims(embed_dim, &HIDDEN_DIMS, rng)
    }

    pub fn with_hidden_dims(embed_dim: usize, hidden_dims: &[usize], rng: &mut SeededRng) -> Self {
        assert!(!hidden_dims.is_empty());
        let mut dims = vec![2 * embed_dim];
        dims.extend_from_slice(hidden_dims);
        MetricNetwork {
            hidden: LayerStack::init(&dims, Activation::Relu, Activation::Relu, rng),
            head: DenseLayer::init(*hidden_dims.last().unwrap(), 2, Activation::Identity, rng),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.hidden.in_dim() / 2
    }

    pub fn params_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in self.hidden.layers.iter().chain(std::iter::once(&self.head)) {
            out.extend_from_slice(layer.weights.values());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let expected: usize = self
            .hidden
            .layers
            .iter()
            .chain(std::iter::once(&self.head))
            .map(|l| l.param_count())
            .sum();
        if params.len() != expected {
            return Err(Error::shape(
                "MetricNetwork::set_params",
                format!("{expected} parameters"),
                format!("{} parameters", params.len()),
            ));
        }
        let mut offset = 0;
        for layer in self
            .hidden
            .layers
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
        {
            let wlen = layer.weights.values().len();
            layer
                .weights
                .values_mut()
                .copy_from_slice(&params[offset..offset + wlen]);
            offset += wlen;
            let blen = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + blen]);
            offset += blen;
        }
        Ok(())
    }

    /// Two-node output for a batch of concatenated [image ‖ text] inputs.
    fn forward_nodes(&self, batch: &Matrix) -> Result<Matrix> {
        self.head.forward(&self.hidden.forward(batch)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub image_index: usize,
    pub text_index: usize,
    /// 1 if the two rows share a class label.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub scores: Matrix,
}

/// Training pairs with an exact 1:1 positive/negative ratio (the extra pair
/// of an odd count is positive), uniform given the label constraint.
pub fn sample_pairs(
    representation: &SharedRepresentation,
    count: usize,
    rng: &mut SeededRng,
) -> Result<Vec<PairSample>> {
    let image_labels = &representation.image_labels;
    let text_labels = &representation.text_labels;
    let classes: std::collections::BTreeSet<usize> = image_labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::Sampling(format!(
            "pair sampling needs >= 2 classes, found {}",
            classes.len()
        )));
    }
    let mut texts_by_label: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in text_labels.iter().enumerate() {
        texts_by_label.entry(l).or_default().push(i);
    }
    let positive_count = count - count / 2;
    let mut pairs = Vec::with_capacity(count);
    for k in 0..count {
        let image_index = rng.gen_range(0..image_labels.len());
        let label = image_labels[image_index];
        if k < positive_count {
            let candidates = texts_by_label
                .get(&label)
                .filter(|c| !c.is_empty())
                .ok_or_else(|| {
                    Error::Sampling(format!(
                        "class {label} has no text samples for a positive pair"
                    ))
                })?;
            pairs.push(PairSample {
                image_index,
                text_index: candidates[rng.gen_range(0..candidates.len())],
                label: 1,
            });
        } else {
            if texts_by_label
                .iter()
                .all(|(l, v)| *l == label || v.is_empty())
            {
                return Err(Error::Sampling(format!(
                    "class {label} has no different-label text samples for a negative pair"
                )));
            }
            loop {
                let text_index = rng.gen_range(0..text_labels.len());
                if text_labels[text_index] != label {
                    pairs.push(PairSample {
                        image_index,
                        text_index,
                        label: 0,
                    });
                    break;
                }
            }
        }
    }
    Ok(pairs)
}

fn concat_pair(representation: &SharedRepresentation, pair: &PairSample) -> Vec<f64> {
    let mut v = representation
        .image_embeddings
        .row(pair.image_index)
        .to_vec();
    v.extend_from_slice(representation.text_embeddings.row(pair.text_index));
    v
}

pub struct MetricTrainOutcome {
    pub loss_history: Vec<f64>,
}

pub fn train_metric(
    net: &mut MetricNetwork,
    representation: &SharedRepresentation,
    pairs: &[PairSample],
    config: &SgdConfig,
    rng: &mut SeededRng,
) -> Result<MetricTrainOutcome> {
    config.validate()?;
    if representation.image_embeddings.cols() != net.embed_dim() {
        return Err(Error::shape(
            "train_metric",
            format!("embeddings of dimension {}", net.embed_dim()),
            format!(
                "embeddings of dimension {}",
                representation.image_embeddings.cols()
            ),
        ));
    }
    if pairs.is_empty() {
        return Err(Error::Usage(
            "train_metric requires at least one pair".into(),
        ));
    }
    let in_dim = 2 * net.embed_dim();
    let mut loss_history = Vec::with_capacity(config.max_iterations);
    for iteration in 0..config.max_iterations {
        let batch_pairs: Vec<&PairSample> = (0..config.batch_size)
            .map(|_| &pairs[rng.gen_range(0..pairs.len())])
            .collect();
        let rows: Vec<Vec<f64>> = batch_pairs
            .iter()
            .map(|p| concat_pair(representation, p))
            .collect();
        let batch = Matrix::stack_rows(rows.iter().map(|r| r.as_slice()), in_dim);
        let labels: Vec<u8> = batch_pairs.iter().map(|p| p.label).collect();

        let hidden_caches = net.hidden.forward_cached(&batch)?;
        let head_cache = net
            .head
            .forward_cached(&hidden_caches.last().unwrap().output)?;
        let nodes: Vec<[f64; 2]> = (0..head_cache.output.rows())
            .map(|r| [head_cache.output.get(r, 0), head_cache.output.get(r, 1)])
            .collect();
        let loss = cross_entropy_over_nodes(&nodes, &labels)?;
        if !loss.value.is_finite() {
            return Err(Error::Training {
                stage: "metric".into(),
                iteration,
                message: format!("non-finite loss {}", loss.value),
            });
        }
        loss_history.push(loss.value);

        let mut upstream = Matrix::zeros(nodes.len(), 2);
        for (r, g) in loss.grad_nodes.iter().enumerate() {
            upstream.set(r, 0, g[0]);
            upstream.set(r, 1, g[1]);
        }
        let head_grads = net.head.backward(&head_cache, &upstream)?;
        let (hidden_grads, _) = net
            .hidden
            .backward(&hidden_caches, &head_grads.input_grad)?;
        sgd_step_layer(&mut net.head, &head_grads, config)?;
        for (layer, g) in net.hidden.layers.iter_mut().zip(&hidden_grads) {
            sgd_step_layer(layer, g, config)?;
        }
    }
    Ok(MetricTrainOutcome { loss_history })
}

/// Similarity estimate in (0, 1) for one pair; input is always [image ‖ text].
pub fn score(net: &MetricNetwork, image_embedding: &[f64], text_embedding: &[f64]) -> Result<f64> {
    if image_embedding.len() != net.embed_dim() || text_embedding.len() != net.embed_dim() {
        return Err(Error::shape(
            "score",
            format!("two embeddings of dimension {}", net.embed_dim()),
            format!("{} and {}", image_embedding.len(), text_embedding.len()),
        ));
    }
    let mut v = image_embedding.to_vec();
    v.extend_from_slice(text_embedding);
    let batch = Matrix::from_vec(1, v.len(), v)?;
    let nodes = net.forward_nodes(&batch)?;
    Ok(softmax_pair(nodes.get(0, 0), nodes.get(0, 1)))
}

/// Entry (r, c) scores query r against gallery item c, image-side embedding
/// first. Rows may be computed on several threads; results are bit-identical
/// to the sequential loop.
pub fn score_matrix(
    net: &MetricNetwork,
    queries: &Matrix,
    query_modality: Modality,
    gallery: &Matrix,
    gallery_modality: Modality,
    threads: usize,
) -> Result<SimilarityMatrix> {
    if query_modality == gallery_modality {
        return Err(Error::Usage(
            "score_matrix requires queries and gallery from opposite modalities".into(),
        ));
    }
    let embed = net.embed_dim();
    if queries.cols() != embed || gallery.cols() != embed {
        return Err(Error::shape(
            "score_matrix",
            format!("embeddings of dimension {embed}"),
            format!("queries {} / gallery {}", queries.cols(), gallery.cols()),
        ));
    }
    let n_q = queries.rows();
    let n_g = gallery.rows();
    let mut scores = Matrix::zeros(n_q, n_g);

    let score_row = |net: &MetricNetwork, q: &[f64], out: &mut [f64]| -> Result<()> {
        let mut rows = Vec::with_capacity(n_g);
        for c in 0..n_g {
            let g = gallery.row(c);
            let mut v = Vec::with_capacity(2 * embed);
            match query_modality {
                Modality::Image => {
                    v.extend_from_slice(q);
                    v.extend_from_slice(g);
                }
                Modality::Text => {
                    v.extend_from_slice(g);
                    v.extend_from_slice(q);
                }
            }
            rows.push(v);
        }
        let batch = Matrix::stack_rows(rows.iter().map(|r| r.as_slice()), 2 * embed);
        let nodes = net.forward_nodes(&batch)?;
        for c in 0..n_g {
            out[c] = softmax_pair(nodes.get(c, 0), nodes.get(c, 1));
        }
        Ok(())
    };

    let threads = threads.max(1).min(n_q.max(1));
    if threads == 1 {
        for r in 0..n_q {
            score_row(net, queries.row(r), scores.row_mut(r))?;
        }
    } else {
        let chunk = n_q.div_ceil(threads);
        let mut slots: Vec<&mut [f64]> = scores.values_mut().chunks_mut(chunk * n_g).collect();
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for (t, slot) in slots.drain(..).enumerate() {
                let start = t * chunk;
                let handle = scope.spawn(move || -> Result<()> {
                    for (i, out) in slot.chunks_mut(n_g).enumerate() {
                        score_row(net, queries.row(start + i), out)?;
                    }
                    Ok(())
                });
                handles.push(handle);
            }
            for h in handles {
                h.join().expect("scoring thread panicked")?;
            }
            Ok(())
        })?;
    }
    if !scores.all_finite() {
        return Err(Error::Numeric("non-finite similarity score".into()));
    }
    Ok(SimilarityMatrix { scores })
}
