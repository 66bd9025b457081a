// SPDX-License-Identifier: MIT OR Apache-2.0

//! # neurofunc
//!
//! Neuron-level analysis of transformer feed-forward layers.
//!
//! A neuron is one row of the FFN input (and gate) projection paired with
//! the matching column of the output projection. The crate provides
//!
//! - [`model`]: a small deterministic decoder-only reference transformer
//!   with exact per-neuron decomposition, activation capture and masked
//!   forwards, plus a generator for models with planted
//!   functionality-specialised neurons;
//! - [`trace`]: the seven-way functionality taxonomy, manifest ingestion and
//!   the `NTRC1` activation-trace format;
//! - [`sparsity`]: activation / output-magnitude indicators, their CDFs and
//!   mask-lowest-k% loss sweeps;
//! - [`localization`]: average-precision functionality scores, top-fraction
//!   selection, pruning perturbation matrices and partition overlap.
//!
//! ```
//! use neurofunc::model::{build_planted_model, planted_corpus, FfnVariant, ModelConfig, PlantSpec};
//! use neurofunc::trace::Functionality;
//!
//! let cfg = ModelConfig::new(2, 32, 32, 48, 2, FfnVariant::Gated, 0);
//! let plant = PlantSpec::uniform(&cfg, &[Functionality::Coding], 4, 0).unwrap();
//! let planted = build_planted_model(cfg, &plant, 7).unwrap();
//! let corpus = planted_corpus(planted.layout.as_ref().unwrap(), 2, 0);
//! let loss = neurofunc::model::corpus_loss(&planted.model, &corpus, None).unwrap();
//! assert!(loss.mean().unwrap().is_finite());
//! ```

pub mod error;
pub mod localization;
pub mod model;
pub mod sparsity;
pub mod tensor;
pub mod trace;

pub use error::{Error, Result};
