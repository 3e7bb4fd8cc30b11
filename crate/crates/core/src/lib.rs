//! Single-layer semi-supervised sparse autoencoder for frame-level phone
//! classification: a tanh encoder shared by a tanh decoder and a softmax
//! classifier, trained on `E = E_R + α E_C` over a mix of labeled and
//! unlabeled frames.

mod binio;
mod dd;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objective;
pub mod sweep;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
