//! Label-dependent, event-guided cross-attention for multi-label risk
//! prediction over clinical notes.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`autodiff`]), static token embeddings ([`embedding`]), the model and its
//! ablations ([`model`]), data handling and a planted-signal generator
//! ([`data`], [`synthetic`]), training ([`training`]), evaluation metrics
//! ([`metrics`]), binary checkpoints ([`checkpoint`]) and attention reports
//! ([`explain`]).

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod embedding;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{LerpError, Result};
pub use model::{Model, ModelConfig, Variant};
pub use tensor::Tensor;
