//! Siamese BLSTM sentence-pair similarity with attention pooling, whose
//! parameters are seeded by an Artificial Bee Colony search and then refined
//! by gradient descent.
//!
//! The pipeline runs: [`corpus`] preprocessing and pair construction,
//! [`embedding`] skip-gram word vectors, the [`model`] forward pass,
//! [`abc`] parameter seeding, [`trainer`] backpropagation, and
//! [`evaluation`] by k-fold cross-validation.

pub mod abc;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
