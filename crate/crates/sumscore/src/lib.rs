//! Automated quality assessment of learner-written passage summaries.
//!
//! The crate scores a summary written for a reading passage with three
//! model families and their ensemble:
//!
//! - a feature-based learner (SVM for binary quality, kernel ridge
//!   regression for graded scores) over verbatim, semantic, document-vector
//!   and discourse features,
//! - a CNN over the sentence-to-sentence similarity matrix between the
//!   summary and the passage,
//! - bidirectional LSTM encoders over both texts, merged directly or
//!   through an attention mechanism.
//!
//! [`corpus`] holds the data model and synthetic-corpus generator,
//! [`eval`] the cross-validation harness and baselines, and [`cli`] the
//! command-line entry point.

pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod features;
pub mod metrics;
pub mod models;
pub mod nncore;
pub mod reference;
pub mod textproc;

pub use error::{Error, Result};
