//! Entity linking on multiparty dialogue with a BiLSTM encoder and a learned
//! entity library queried by cosine similarity.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: dense tensors, a reverse-mode tape and the Adam optimizer.
//! * [`corpus`]: the dialogue data model, TSV ingestion, vocabularies,
//!   chunked batching, pretrained vectors and a synthetic corpus generator.
//! * [`model`]: the encoder and the two scoring heads (entity library and
//!   plain linear softmax).
//! * [`training`]: loss, epoch loop, k-fold cross-validation, checkpoints and
//!   output-averaging ensembles.
//! * [`evaluation`]: class mappings, macro-F1/accuracy scoring, per-category
//!   breakdowns and approximate randomization tests.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod training;

pub use error::{Error, Result};

/// Floating point type used by every numeric array.
#[cfg(not(feature = "single"))]
pub type Real = f64;

/// Floating point type used by every numeric array.
#[cfg(feature = "single")]
pub type Real = f32;
