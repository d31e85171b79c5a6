//! Laboratory for temporal-ordering understanding in text-to-audio retrieval.
//!
//! The crate covers the whole loop: temporal-cue analysis of caption corpora,
//! order-corrupting caption rewrites (`rev`, `rep`) and cue-balancing
//! (`uniformize`), a synthetic two-event audio corpus, a small dual encoder
//! trained with an audio-text NT-Xent objective plus an optional text-text
//! margin objective, and R@k evaluation on original versus corrupted queries.
//!
//! The numeric core ([`model`], [`losses`], [`optim`], [`eval::recall_at_k`])
//! is generic over [`Scalar`]; the aliases below pick `f64`, which training
//! and the gradient checks use.

pub mod audio;
pub mod audit;
pub mod corpus;
pub mod cue;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod optim;
pub mod plot;
pub mod scalar;
pub mod syncaps;
pub mod train;
pub mod transform;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations used by training and evaluation.
pub type Params = model::DualEncoderParams<f64>;
pub type Grads = model::Gradients<f64>;
pub type Tensor = model::Tensor<f64>;
pub type AudioInput = model::AudioInput<f64>;
