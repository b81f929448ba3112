//! Phrase-aware sentence representation learning.
//!
//! The pipeline: RAKE phrase extraction over tokenized sentences, duplicate-and-mask
//! pair construction (the masked phrase is the "difference" between a sentence and its
//! masked copy), EDA-style augmentation, and a siamese transformer encoder trained to
//! reconstruct the masked phrase through a generative decoder conditioned on the
//! combined signal of both sentence embeddings. Evaluation covers Spearman correlation
//! on graded pairs, retrieval MAP / reranking MRR@10, cosine-density buckets, and
//! alignment/uniformity diagnostics.
//!
//! Modules map onto pipeline stages:
//!
//! - [`text`] — tokenization, vocabulary, id encoding
//! - [`phrase`] — RAKE extraction and ranking, external span files
//! - [`augment`] — synonym replacement, random deletion, token reordering
//! - [`pairgen`] — masked pairs, MLM corruption, batching
//! - [`tensor`] — dense tensors with reverse-mode autodiff, Adam, checkpoints
//! - [`model`] — encoder, pooling, decoding signal, generative decoder, losses
//! - [`train`] — training loop, config files, ablation sweeps
//! - [`eval`] — metrics and corpus embedding
//! - [`synth`] — synthetic corpora for desk-scale experiments

pub mod augment;
pub mod eval;
pub mod model;
pub mod pairgen;
pub mod phrase;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;

mod threads;

pub use threads::max_threads;
