// SPDX-License-Identifier: MIT OR Apache-2.0

//! Functionality localization: average-precision scores, top-fraction
//! selection, pruning perturbation and partition overlap.

mod ap;
mod partition;
mod perturbation;
mod scores;
mod selection;

pub use ap::average_precision;
pub use partition::{partition_similarity, random_baseline, OverlapBaseline, SimilarityMatrix};
pub use perturbation::{prune_and_eval, PerturbationMatrix};
pub use scores::{
    func_score_table, func_score_table_with, random_activation_scores, summarize_scores,
    FuncScoreTable, LayerScoreSummary, ScoreOptions, ScoreProvenance,
};
pub use selection::{top_fraction, top_fraction_all};
