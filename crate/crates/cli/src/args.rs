// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use neurofunc::model::{ActivationFn, FfnVariant};
use neurofunc::sparsity::IndicatorKind;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "neurofunc", version, about = "Neuron functionality localization and FFN activation sparsity analysis")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "NEUROFUNC_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a reference-model checkpoint, optionally with planted neurons.
    GenModel(GenModelArgs),
    /// Generate a synthetic JSONL manifest for a planted model.
    GenCorpus(GenCorpusArgs),
    /// Capture an activation trace for a manifest.
    Trace(TraceArgs),
    /// Response cross-entropy and perplexity of a model on a manifest.
    Eval(EvalArgs),
    /// Indicator CDFs and mask-lowest-k% loss sweeps.
    Sparsity(SparsityArgs),
    /// Functionality scores, pruning perturbation and partition overlap.
    Localize(LocalizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantArg {
    Vanilla,
    Gated,
}

impl From<VariantArg> for FfnVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Vanilla => FfnVariant::Vanilla,
            VariantArg::Gated => FfnVariant::Gated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationArg {
    Relu,
    Gelu,
    Silu,
}

impl From<ActivationArg> for ActivationFn {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Relu => ActivationFn::Relu,
            ActivationArg::Gelu => ActivationFn::Gelu,
            ActivationArg::Silu => ActivationFn::Silu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KindArg {
    Activation,
    OutputMagnitude,
    Both,
}

impl KindArg {
    pub fn kinds(self) -> Vec<IndicatorKind> {
        match self {
            KindArg::Activation => vec![IndicatorKind::Activation],
            KindArg::OutputMagnitude => vec![IndicatorKind::OutputMagnitude],
            KindArg::Both => IndicatorKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerArg {
    /// Whitespace-separated token ids.
    Ids,
    /// UTF-8 bytes modulo the vocabulary size.
    Bytes,
}

#[derive(Debug, Args, Serialize)]
pub struct GenModelArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 256)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 128)]
    pub vocab: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::Gated)]
    pub variant: VariantArg,
    /// Defaults to relu for vanilla and silu for gated blocks.
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON plant specification (`{"groups": [...], "markers_per_group": m}`).
    #[arg(long, conflicts_with = "plant_per_group")]
    pub plant_file: Option<PathBuf>,
    /// Plant this many neurons per functionality in every layer.
    #[arg(long)]
    pub plant_per_group: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub plant_seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct GenCorpusArgs {
    /// Layout sidecar written by `gen-model` for a planted model.
    #[arg(long)]
    pub layout: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub per_functionality: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CorpusArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Instances retained per functionality.
    #[arg(long, default_value_t = 1000)]
    pub cap: usize,
    /// Sampling seed for the per-functionality cap.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = TokenizerArg::Ids)]
    pub tokenizer: TokenizerArg,
}

#[derive(Debug, Args, Serialize)]
pub struct TraceArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Also store per-token |activation| blocks.
    #[arg(long)]
    pub per_token: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityMode {
    Cdf,
    Sweep,
}

#[derive(Debug, Args, Serialize)]
pub struct SparsityArgs {
    #[arg(long, value_enum)]
    pub mode: SparsityMode,
    #[arg(long, value_enum, default_value_t = KindArg::Both)]
    pub kind: KindArg,
    /// Trace with per-token blocks (cdf mode only).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = TokenizerArg::Ids)]
    pub tokenizer: TokenizerArg,
    /// Comma-separated masking fractions (sweep) or CDF grid points (cdf).
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Random fixed-set masking seeds averaged into a baseline column (sweep).
    #[arg(long, default_value_t = 0)]
    pub random_seeds: u64,
    /// Relative loss increase that still counts as no degradation (sweep).
    #[arg(long, default_value_t = 0.01)]
    pub tolerance: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LocalizeArgs {
    #[command(subcommand)]
    pub action: LocalizeAction,
}

#[derive(Debug, Args, Serialize)]
pub struct LocalizeCommon {
    #[arg(long)]
    pub trace: PathBuf,
    /// Top fraction of neurons per layer selected for each functionality.
    #[arg(long, default_value_t = 0.05)]
    pub fraction: f64,
    /// Treat functionalities without instances as undefined instead of failing.
    #[arg(long)]
    pub allow_missing: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum LocalizeAction {
    /// Per-neuron functionality scores and per-layer summaries.
    Scores {
        #[command(flatten)]
        common: LocalizeCommon,
        /// Seed of the random-activation score baseline.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Perplexity change when each functionality's neurons are pruned.
    Prune {
        #[command(flatten)]
        common: LocalizeCommon,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Overlap between functionality neuron sets.
    Partition {
        #[command(flatten)]
        common: LocalizeCommon,
        /// Also report the overlap of random neuron sets of the same size.
        #[arg(long)]
        baseline: bool,
        #[arg(long, default_value_t = 1000)]
        baseline_trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}
