//! Form–meaning mutual information over concept-aligned wordlists.
//!
//! The pipeline trains two phone-level LSTM language models per fold, one
//! unconditioned and one whose initial state is a learned projection of the
//! concept, and reads the mutual information between wordform and meaning off
//! the difference of their held-out cross-entropies. Held-out words are
//! averaged per language, family and macroarea so that large families and
//! well-documented regions do not dominate; significance comes from paired
//! sign-flip permutation tests with Benjamini–Hochberg correction.
//!
//! Module map:
//!
//! - [`lexicon`]: wordlist types, TSV ingest, filtering, folds, family weights
//! - [`neural`]: dense LSTM kernel with exact gradients and AdamW
//! - [`models`]: training and scoring of phonotactic language models
//! - [`estimate`]: per-word PMI records and hierarchical entropy estimates
//! - [`stats`]: permutation tests, Benjamini–Hochberg, Welch's t-test
//! - [`hyperopt`]: Gaussian-process Bayesian optimisation of model size
//! - [`synth`]: synthetic lexica with exactly computable mutual information
//! - [`pipeline`]: end-to-end runs, run directories and reports

pub mod error;
pub mod estimate;
pub mod hyperopt;
pub mod lexicon;
pub mod models;
pub mod neural;
pub mod rng;
pub mod stats;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
pub use lexicon::{Alphabet, Doculect, Lexicon, Macroarea, Phone, WordEntry};
