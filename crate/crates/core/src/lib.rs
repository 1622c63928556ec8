//! Unified character-level TTS front-end.
//!
//! One transformer encoder feeds two per-character heads: polyphone
//! disambiguation and prosodic break prediction. The crate carries its own
//! reverse-mode autodiff, trains both heads jointly on mixed batches, and
//! compresses a trained teacher into a smaller student by matching attention
//! maps and hidden states.
//!
//! The crate is `no_std` with `alloc`; the default `std` feature only swaps in
//! the platform float intrinsics.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod annotate;
pub mod corpus;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod heads;
pub mod lexicon;
mod math;
pub mod metrics;
pub mod model;
pub mod multitask;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod pretrain;
pub mod prosody;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod vocab;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
