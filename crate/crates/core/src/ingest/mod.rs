//! Annotation and feature ingestion, the desk-scale text embedder, and the
//! synthetic planted-event corpus.

pub mod annotations;
pub mod embed;
pub mod features;
pub mod synth;
pub mod text;

pub use annotations::{load_annotations, parse_annotations, save_annotations, DenseAnnotation, GroundTruthEvent};
pub use embed::{cosine, hash_bow_embed, EmbeddingProvider, HashBowEmbedder, HashEmbedding};
pub use features::{load_frame_features, resample_frames, save_frame_features, FrameFeatures};
pub use synth::{generate_synthetic_corpus, SynthConfig, SynthManifest, SyntheticCorpus};
pub use text::tokenize;
