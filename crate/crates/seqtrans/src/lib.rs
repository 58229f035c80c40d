//! Neural sequence labeling for low-resource languages.
//!
//! The crate bundles everything needed to train and evaluate a
//! BLSTM-CNN-CRF part-of-speech tagger from scratch on CPU:
//!
//! * [`corpus`] — column-formatted tagged text, vocabularies, splits, padding.
//! * [`embeddings`] — subword (character n-gram) skip-gram word vectors and
//!   the portable `.vec` text format.
//! * [`vecmap`] — unsupervised cross-lingual mapping of two monolingual
//!   embedding spaces via self-learning orthogonal Procrustes.
//! * [`neural`] — the dense tensor core with hand-written backpropagation:
//!   character CNN, bidirectional LSTM, dropout, and a linear-chain CRF.
//! * [`optim`] — Adam, AdaDelta, gradient clipping, early stopping.
//! * [`models`] — the single-task, multitask, and cross-lingual transfer
//!   tagger architectures, the training loop, and model serialization.
//! * [`synth`] — a deterministic twin-language corpus generator used by the
//!   test and acceptance suites.
//! * [`config`] — flat `key = value` run configuration.

// The numeric kernels index several parallel arrays per iteration; indexed
// loops are the clearer form there.
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod models;
pub mod neural;
pub mod optim;
pub mod synth;
pub mod vecmap;

mod util;

pub use util::{fnv1a64, seeded_rng};
