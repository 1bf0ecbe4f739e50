//! Memory-retrieval-augmented dense video captioning at desk scale.
//!
//! A memory bank of caption embeddings is queried per temporal anchor of a
//! video; the retrieved text features and multi-scale frame features pass
//! through a shared encoder and a decoder with separate visual and textual
//! cross-attention, feeding per-query event heads.

pub mod autograd;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fixedfmt;
pub mod gradcheck;
pub mod ingest;
pub mod loss;
pub mod matching;
pub mod memory;
pub mod meta;
pub mod model;
pub mod retrieval;

pub use error::{Error, Result};
