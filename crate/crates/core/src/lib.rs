//! Compiles piecewise-linear neural networks into exactly equivalent oblique
//! decision trees, prunes them losslessly and reports the cost trade-off.

pub mod activation;
pub mod conv;
pub mod effective;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod network;
pub mod prune;
pub mod rnn;
pub mod tree;

pub use activation::{quantize_activation, region_select, PwlActivation, Region};
pub use error::{Error, Result};
pub use network::{
    augment_bias, fold_normalization, forward, ActivationTrace, CategorizationVector, DenseLayer, InputShape, Layer,
    NetworkSpec, NormPosition, NormalizationSpec, OutputActivation, ResidualBlock, RnnLayer,
};
