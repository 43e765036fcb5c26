use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::matrix::{dot, Matrix};
use crate::nn::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed in terms of the activated output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "identity" => Some(Activation::Identity),
            "sigmoid" => Some(Activation::Sigmoid),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Fully-connected layer: `activation(W x + b)` with W stored out_dim x in_dim.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Cached activations from a forward pass, needed by the backward pass.
pub struct ForwardCache {
    pub input: Matrix,
    pub output: Matrix,
}

impl DenseLayer {
    /// Uniform init in [-s, s] with s = sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn init(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut SeededRng,
    ) -> Self {
        let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut weights = Matrix::zeros(out_dim, in_dim);
        for v in weights.values_mut() {
            *v = rng.gen_range(-s..=s);
        }
        DenseLayer {
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::shape(
                "DenseLayer::from_parts",
                format!("bias of length {}", weights.rows()),
                format!("bias of length {}", bias.len()),
            ));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_dim() {
            return Err(Error::shape(
                "dense_forward",
                format!("input with {} columns", self.in_dim()),
                format!("input with {} columns", input.cols()),
            ));
        }
        let mut out = Matrix::zeros(input.rows(), self.out_dim());
        for r in 0..input.rows() {
            let x = input.row(r);
            let out_row = out.row_mut(r);
            for o in 0..self.bias.len() {
                let z = dot(self.weights.row(o), x) + self.bias[o];
                out_row[o] = self.activation.apply(z);
            }
        }
        Ok(out)
    }

    pub fn forward_cached(&self, input: &Matrix) -> Result<ForwardCache> {
        let output = self.forward(input)?;
        Ok(ForwardCache {
            input: input.clone(),
            output,
        })
    }

    /// Gradients of the forward map. `upstream` is dLoss/dOutput with the same
    /// shape as the cached output.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<LayerGrads> {
        if upstream.rows() != cache.output.rows() || upstream.cols() != cache.output.cols() {
            return Err(Error::shape(
                "dense_backward",
                format!("{}x{}", cache.output.rows(), cache.output.cols()),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }
        let batch = cache.input.rows();
        let in_dim = self.in_dim();
        let out_dim = self.out_dim();
        let mut weight_grad = Matrix::zeros(out_dim, in_dim);
        let mut bias_grad = vec![0.0; out_dim];
        let mut input_grad = Matrix::zeros(batch, in_dim);
        for r in 0..batch {
            let x = cache.input.row(r);
            let y = cache.output.row(r);
            let g = upstream.row(r);
            let ig = input_grad.row_mut(r);
            for o in 0..out_dim {
                let delta = g[o] * self.activation.derivative_from_output(y[o]);
                if delta == 0.0 {
                    continue;
                }
                bias_grad[o] += delta;
                let wg = weight_grad.row_mut(o);
                for i in 0..in_dim {
                    wg[i] += delta * x[i];
                }
                let w = self.weights.row(o);
                for i in 0..in_dim {
                    ig[i] += delta * w[i];
                }
            }
        }
        Ok(LayerGrads {
            weight_grad,
            bias_grad,
            input_grad,
        })
    }

    pub fn param_count(&self) -> usize {
        self.weights.values().len() + self.bias.len()
    }
}

pub struct LayerGrads {
    pub weight_grad: Matrix,
    pub bias_grad: Vec<f64>,
    pub input_grad: Matrix,
}

/// A stack of dense layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub layers: Vec<DenseLayer>,
}

impl LayerStack {
    pub fn init(dims: &[usize], hidden: Activation, last: Activation, rng: &mut SeededRng) -> Self {
        assert!(dims.len() >= 2);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let act = if layers.len() == dims.len() - 2 {
                last
            } else {
                hidden
            };
            layers.push(DenseLayer::init(w[0], w[1], act, rng));
        }
        LayerStack { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let mut cur = input.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, input: &Matrix) -> Result<Vec<ForwardCache>> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = input.clone();
        for layer in &self.layers {
            let cache = layer.forward_cached(&cur)?;
            cur = cache.output.clone();
            caches.push(cache);
        }
        Ok(caches)
    }

    /// Backward through the whole stack; returns per-layer grads (same order as
    /// layers) and the gradient with respect to the stack input.
    pub fn backward(
        &self,
        caches: &[ForwardCache],
        upstream: &Matrix,
    ) -> Result<(Vec<LayerGrads>, Matrix)> {
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let lg = layer.backward(cache, &g)?;
            g = lg.input_grad.clone();
            grads.push(lg);
        }
        grads.reverse();
        Ok((grads, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(
        weights: Vec<f64>,
        rows: usize,
        cols: usize,
        bias: Vec<f64>,
        act: Activation,
    ) -> DenseLayer {
        DenseLayer::from_parts(Matrix::from_vec(rows, cols, weights).unwrap(), bias, act).unwrap()
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let l = layer(
            vec![1.0, 0.0, 0.0, 1.0],
            2,
            2,
            vec![0.0, 0.0],
            Activation::Identity,
        );
        let x = Matrix::from_vec(1, 2, vec![3.5, -2.25]).unwrap();
        assert_eq!(l.forward(&x).unwrap(), x);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let l = layer(vec![0.0, 0.0], 1, 2, vec![0.0], Activation::Sigmoid);
        let x = Matrix::from_vec(2, 2, vec![1.0, -4.0, 0.25, 9.0]).unwrap();
        let y = l.forward(&x).unwrap();
        assert_eq!(y.values(), &[0.5, 0.5]);
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let l = layer(
            vec![1.0, 0.0, 0.0, 1.0],
            2,
            2,
            vec![0.0, 0.0],
            Activation::Relu,
        );
        let x = Matrix::from_vec(1, 2, vec![-1.0, 2.0]).unwrap();
        assert_eq!(l.forward(&x).unwrap().values(), &[0.0, 2.0]);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let l = layer(vec![1.0, 2.0], 1, 2, vec![0.0], Activation::Identity);
        let x = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(l.forward(&x).is_err());
    }

    #[test]
    fn scalar_chain_rule() {
        // 1x1 identity layer: weight_grad = g*x, input_grad = g*w
        let w = 1.75;
        let x_val = -0.6;
        let g_val = 2.0;
        let l = layer(vec![w], 1, 1, vec![0.0], Activation::Identity);
        let x = Matrix::from_vec(1, 1, vec![x_val]).unwrap();
        let cache = l.forward_cached(&x).unwrap();
        let g = Matrix::from_vec(1, 1, vec![g_val]).unwrap();
        let grads = l.backward(&cache, &g).unwrap();
        assert_eq!(grads.weight_grad.get(0, 0), g_val * x_val);
        assert_eq!(grads.input_grad.get(0, 0), g_val * w);
        assert_eq!(grads.bias_grad[0], g_val);
    }

    #[test]
    fn relu_dead_zone_zeroes_all_gradients() {
        let l = layer(vec![1.0], 1, 1, vec![0.0], Activation::Relu);
        let x = Matrix::from_vec(1, 1, vec![-2.0]).unwrap();
        let cache = l.forward_cached(&x).unwrap();
        let g = Matrix::from_vec(1, 1, vec![5.0]).unwrap();
        let grads = l.backward(&cache, &g).unwrap();
        assert_eq!(grads.weight_grad.get(0, 0), 0.0);
        assert_eq!(grads.bias_grad[0], 0.0);
        assert_eq!(grads.input_grad.get(0, 0), 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = SeededRng::new(7);
        let l = DenseLayer::init(4, 3, Activation::Sigmoid, &mut rng);
        let x = Matrix::from_vec(2, 4, vec![0.1, -0.2, 0.3, 0.9, 1.0, 2.0, -3.0, 0.0]).unwrap();
        assert_eq!(l.forward(&x).unwrap(), l.forward(&x).unwrap());
    }
}
