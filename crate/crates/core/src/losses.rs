//! The loss functions used across the pipeline, each returning both the
//! forward value and the analytic gradients needed for backpropagation.
//!
//! Hinge kinks are subdifferentiable; the subgradient 0 is used exactly at
//! the kink so gradients stay bounded.

use crate::error::{Error, Result};
use crate::nn::matrix::squared_distance;

/// Floor applied to probabilities before logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// The three hinge margins: lambda for the contrastive loss, alpha for the
/// image-anchored triplet loss, beta for the text-anchored one.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Margins {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Margins {
            lambda: 1.0,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl Margins {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!(
                    "margin {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ContrastiveLoss {
    pub value: f64,
    pub grad_img: Vec<f64>,
    pub grad_txt: Vec<f64>,
}

/// Contrastive loss over one cross-media pair. Same label: squared Euclidean
/// distance. Different label: max(0, lambda - distance)^2, a squared hinge on
/// the unsquared distance.
pub fn contrastive_loss(
    f_img: &[f64],
    f_txt: &[f64],
    same_label: bool,
    lambda: f64,
) -> Result<ContrastiveLoss> {
    if f_img.len() != f_txt.len() {
        return Err(Error::shape(
            "contrastive_loss",
            format!("vectors of equal length {}", f_img.len()),
            format!("text vector of length {}", f_txt.len()),
        ));
    }
    let dim = f_img.len();
    let d2 = squared_distance(f_img, f_txt);
    if same_label {
        let mut grad_img = vec![0.0; dim];
        let mut grad_txt = vec![0.0; dim];
        for i in 0..dim {
            let diff = f_img[i] - f_txt[i];
            grad_img[i] = 2.0 * diff;
            grad_txt[i] = -2.0 * diff;
        }
        Ok(ContrastiveLoss {
            value: d2,
            grad_img,
            grad_txt,
        })
    } else {
        let d = d2.sqrt();
        let hinge = lambda - d;
        if hinge <= 0.0 || d == 0.0 {
            // d == 0 with different labels puts the norm at its own kink;
            // the loss is lambda^2 there and the 0 subgradient is used.
            let value = if hinge > 0.0 { hinge * hinge } else { 0.0 };
            return Ok(ContrastiveLoss {
                value,
                grad_img: vec![0.0; dim],
                grad_txt: vec![0.0; dim],
            });
        }
        // d/d(f_img) of (lambda - d)^2 = -2 (lambda - d) * (f_img - f_txt)/d
        let scale = -2.0 * hinge / d;
        let mut grad_img = vec![0.0; dim];
        let mut grad_txt = vec![0.0; dim];
        for i in 0..dim {
            let diff = f_img[i] - f_txt[i];
            grad_img[i] = scale * diff;
            grad_txt[i] = -scale * diff;
        }
        Ok(ContrastiveLoss {
            value: hinge * hinge,
            grad_img,
            grad_txt,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TripletLoss {
    pub value: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

/// max(0, ||a - p||^2 - ||a - n||^2 + margin). Serves both the image-anchored
/// loss (margin alpha) and the text-anchored loss (margin beta).
pub fn triplet_loss(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<TripletLoss> {
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(Error::shape(
            "triplet_loss",
            format!("vectors of equal length {}", anchor.len()),
            format!("positive {}, negative {}", positive.len(), negative.len()),
        ));
    }
    let dim = anchor.len();
    let d_ap = squared_distance(anchor, positive);
    let d_an = squared_distance(anchor, negative);
    let arg = d_ap - d_an + margin;
    if arg <= 0.0 {
        return Ok(TripletLoss {
            value: 0.0,
            grad_anchor: vec![0.0; dim],
            grad_positive: vec![0.0; dim],
            grad_negative: vec![0.0; dim],
        });
    }
    let mut grad_anchor = vec![0.0; dim];
    let mut grad_positive = vec![0.0; dim];
    let mut grad_negative = vec![0.0; dim];
    for i in 0..dim {
        grad_anchor[i] = 2.0 * (negative[i] - positive[i]);
        grad_positive[i] = -2.0 * (anchor[i] - positive[i]);
        grad_negative[i] = 2.0 * (anchor[i] - negative[i]);
    }
    Ok(TripletLoss {
        value: arg,
        grad_anchor,
        grad_positive,
        grad_negative,
    })
}

/// p_hat = e^{h1} / (e^{h0} + e^{h1}), computed with max-subtraction.
pub fn softmax_pair(h0: f64, h1: f64) -> f64 {
    let m = h0.max(h1);
    let e0 = (h0 - m).exp();
    let e1 = (h1 - m).exp();
    e1 / (e0 + e1)
}

#[derive(Debug, Clone)]
pub struct CrossEntropyLoss {
    pub value: f64,
    /// dLoss/dp_hat_i, before any softmax.
    pub grad_p_hat: Vec<f64>,
}

/// Mean binary cross-entropy over n predictions. Probabilities are clamped to
/// [PROB_FLOOR, 1 - PROB_FLOOR] before the logarithms.
pub fn cross_entropy(p_hat: &[f64], labels: &[u8]) -> Result<CrossEntropyLoss> {
    if p_hat.len() != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels", p_hat.len()),
            format!("{} labels", labels.len()),
        ));
    }
    if p_hat.is_empty() {
        return Err(Error::Usage("cross_entropy over an empty batch".into()));
    }
    let n = p_hat.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; p_hat.len()];
    for (i, (&p, &label)) in p_hat.iter().zip(labels).enumerate() {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(Error::Numeric(format!(
                "probability {p} outside [0, 1] at index {i}"
            )));
        }
        if label > 1 {
            return Err(Error::Usage(format!(
                "label {label} at index {i} is not 0/1"
            )));
        }
        let pc = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let l = label as f64;
        value -= l * pc.ln() + (1.0 - l) * (1.0 - pc).ln();
        grad[i] = -(l / pc - (1.0 - l) / (1.0 - pc)) / n;
    }
    Ok(CrossEntropyLoss {
        value: value / n,
        grad_p_hat: grad,
    })
}

#[derive(Debug, Clone)]
pub struct PairNodeGrads {
    pub value: f64,
    /// dLoss/d(h0, h1) per pair; shape matches the input node values.
    pub grad_nodes: Vec<[f64; 2]>,
}

/// Mean cross-entropy of softmax_pair over a batch of two-node outputs,
/// differentiated directly with respect to the node values. Folding the
/// softmax into the loss keeps the gradient numerically stable:
/// dE/dh1 = (p_hat - p)/n, dE/dh0 = (p - p_hat)/n.
pub fn cross_entropy_over_nodes(nodes: &[[f64; 2]], labels: &[u8]) -> Result<PairNodeGrads> {
    if nodes.len() != labels.len() {
        return Err(Error::shape(
            "cross_entropy_over_nodes",
            format!("{} labels", nodes.len()),
            format!("{} labels", labels.len()),
        ));
    }
    if nodes.is_empty() {
        return Err(Error::Usage("cross_entropy over an empty batch".into()));
    }
    let n = nodes.len() as f64;
    let mut value = 0.0;
    let mut grad_nodes = Vec::with_capacity(nodes.len());
    for (&[h0, h1], &label) in nodes.iter().zip(labels) {
        let p_hat = softmax_pair(h0, h1);
        let pc = p_hat.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let l = label as f64;
        value -= l * pc.ln() + (1.0 - l) * (1.0 - pc).ln();
        let g1 = (p_hat - l) / n;
        grad_nodes.push([-g1, g1]);
    }
    Ok(PairNodeGrads {
        value: value / n,
        grad_nodes,
    })
}
