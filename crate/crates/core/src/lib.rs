//! Attentive GRU encoder-decoder machine translation toolkit.
//!
//! The crate covers the whole pipeline: BPE subwords and corpus handling,
//! a small reverse-mode autodiff engine, the bi-GRU / conditional-GRU
//! translation model with its tying, initialization and output-head
//! variants, training with BLEU early stopping, greedy/beam/ensemble and
//! factored decoding, reinflection, language models and n-best reranking.

pub mod corpus;
pub mod decode;
pub mod error;
pub mod layers;
pub mod model;
pub mod rerank;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
