// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic reference transformer: FFN neuron decomposition,
//! activation capture, masked forwards, checkpoints and planted models.

mod checkpoint;
mod config;
mod ffn;
mod loss;
mod mask;
mod plant;
mod transformer;

pub use checkpoint::{MODEL_MAGIC, MODEL_VERSION};
pub use config::{ActivationFn, FfnVariant, ModelConfig};
pub use ffn::{ffn_forward, FfnOutput, FfnParams};
pub use loss::{corpus_loss, response_loss, response_nll, CorpusLoss, NllSum};
pub use mask::{fraction_count, lowest_indices, MaskSpec, NeuronSet, SelectionMeta};
pub use plant::{
    build_planted_model, build_planted_model_with, corpus_manifest_rows, planted_corpus,
    planted_corpus_with, CorpusShape, NeuronRole, PlantGroup, PlantLayout, PlantSpec,
    PlantTuning, PlantedModel, RESERVED_CHANNELS,
};
pub use transformer::{
    cross_entropy, ActivationRecord, AttentionParams, ForwardOutput, LayerParams, ReferenceModel,
    NORM_EPS, ROPE_BASE,
};
