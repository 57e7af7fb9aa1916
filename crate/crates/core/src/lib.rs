//! Benchmarking engine for audio-deepfake detection over frozen speech-model
//! embeddings: probing heads, bilinear fusion, EER evaluation, PCA for
//! cross-corpus matching, and a declarative experiment harness.

mod binio;
pub mod checkpoint;
pub mod corpus;
pub mod fusion;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pca;
pub mod probes;
pub mod ptm;
pub mod train;
