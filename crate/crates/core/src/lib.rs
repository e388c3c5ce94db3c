//! Layout sequence modeling core.
//!
//! Everything algorithmic lives here: a small reverse-mode autodiff tensor
//! engine, the layout <-> token-sequence codec, a transformer encoder with
//! switchable bidirectional/causal attention, the masked-span training
//! objective, object-insertion inference (class recommendation, conditional
//! box generation, scoring, NMS), embedding retrieval with AP@k metrics,
//! corpus evaluation, and a synthetic layout grammar with an exact
//! probability oracle.
//!
//! The crate is `no_std`-compatible (with `alloc`); file formats, training
//! orchestration and the CLI live in the companion `layoutseq` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod evaluation;
pub mod grammar;
pub mod inference;
pub mod layout;
pub mod math;
pub mod model;
pub mod retrieval;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::Error;
pub use layout::{BBox, Layout, TokenSeq, Vocab};
pub use model::{AttentionMode, ModelConfig, ModelParams};
pub use rng::Rng;
pub use tensor::Tensor;
