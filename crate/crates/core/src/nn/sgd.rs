use crate::error::{Error, Result};
use crate::nn::layer::{DenseLayer, LayerGrads};
use crate::nn::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) && self.learning_rate != 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// w <- w - lr * (grad + weight_decay * w); biases are not decayed.
pub fn sgd_step_params(
    weights: &mut Matrix,
    bias: &mut [f64],
    weight_grad: &Matrix,
    bias_grad: &[f64],
    config: &SgdConfig,
) -> Result<()> {
    if weights.rows() != weight_grad.rows() || weights.cols() != weight_grad.cols() {
        return Err(Error::shape(
            "sgd_step",
            format!("{}x{}", weights.rows(), weights.cols()),
            format!("{}x{}", weight_grad.rows(), weight_grad.cols()),
        ));
    }
    if bias.len() != bias_grad.len() {
        return Err(Error::shape(
            "sgd_step",
            format!("bias of length {}", bias.len()),
            format!("bias grad of length {}", bias_grad.len()),
        ));
    }
    let lr = config.learning_rate;
    let wd = config.weight_decay;
    for (w, g) in weights.values_mut().iter_mut().zip(weight_grad.values()) {
        *w -= lr * (g + wd * *w);
    }
    for (b, g) in bias.iter_mut().zip(bias_grad) {
        *b -= lr * g;
    }
    Ok(())
}

pub fn sgd_step_layer(
    layer: &mut DenseLayer,
    grads: &LayerGrads,
    config: &SgdConfig,
) -> Result<()> {
    sgd_step_params(
        &mut layer.weights,
        &mut layer.bias,
        &grads.weight_grad,
        &grads.bias_grad,
        config,
    )
}
