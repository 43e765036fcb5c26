//! Minimal dense-network substrate: matrices, layers, SGD with weight decay,
//! and a finite-difference gradient verifier.

pub mod gradcheck;
pub mod layer;
pub mod matrix;
pub mod rng;
pub mod sgd;

pub use gradcheck::finite_difference_check;
pub use layer::{Activation, DenseLayer, ForwardCache, LayerGrads, LayerStack};
pub use matrix::{dot, squared_distance, Matrix};
pub use rng::SeededRng;
pub use sgd::{sgd_step_layer, sgd_step_params, SgdConfig};
