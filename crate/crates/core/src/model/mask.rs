// SPDX-License-Identifier: MIT OR Apache-2.0

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::sparsity::IndicatorKind;
use crate::trace::Functionality;

/// Neuron indices per layer, each layer sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronSet {
    layers: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<SelectionMeta>,
}

/// How a [`NeuronSet`] was chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMeta {
    pub functionality: Functionality,
    /// Selection fraction, stored as text so the set stays `Eq`.
    pub fraction: String,
    pub source: String,
}

impl NeuronSet {
    /// Sorts and deduplicates every layer.
    pub fn new(layers: Vec<Vec<usize>>) -> Self {
        let layers = layers
            .into_iter()
            .map(|mut l| {
                l.sort_unstable();
                l.dedup();
                l
            })
            .collect();
        Self { layers, meta: None }
    }

    pub fn empty(n_layers: usize) -> Self {
        Self::new(vec![Vec::new(); n_layers])
    }

    /// Every neuron of every layer.
    pub fn full(n_layers: usize, d_ff: usize) -> Self {
        Self::new(vec![(0..d_ff).collect(); n_layers])
    }

    pub fn with_meta(mut self, meta: SelectionMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn meta(&self) -> Option<&SelectionMeta> {
        self.meta.as_ref()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, layer: usize) -> &[usize] {
        &self.layers[layer]
    }

    pub fn layers(&self) -> &[Vec<usize>] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(Vec::is_empty)
    }

    pub fn contains(&self, layer: usize, neuron: usize) -> bool {
        self.layers
            .get(layer)
            .is_some_and(|l| l.binary_search(&neuron).is_ok())
    }

    /// Number of shared neurons, summed over layers.
    pub fn intersection_len(&self, other: &NeuronSet) -> usize {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| a.iter().filter(|n| b.binary_search(n).is_ok()).count())
            .sum()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.layers.len() != config.n_layers {
            return Err(Error::InvalidMask(format!(
                "neuron set covers {} layers, model has {}",
                self.layers.len(),
                config.n_layers
            )));
        }
        for (layer, l) in self.layers.iter().enumerate() {
            if let Some(&n) = l.last().filter(|&&n| n >= config.d_ff) {
                return Err(Error::InvalidMask(format!(
                    "neuron {n} in layer {layer} is out of range for d_ff {}",
                    config.d_ff
                )));
            }
        }
        Ok(())
    }
}

/// Which activations to zero during a forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSpec {
    /// For every token and layer, zero the `floor(fraction · d_ff)` neurons
    /// with the lowest indicator.
    PerTokenLowest {
        fraction: f64,
        indicator: IndicatorKind,
    },
    /// Zero the same neurons at every token.
    FixedSet(NeuronSet),
}

impl MaskSpec {
    pub fn lowest(fraction: f64, indicator: IndicatorKind) -> Self {
        Self::PerTokenLowest {
            fraction,
            indicator,
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        match self {
            MaskSpec::PerTokenLowest { fraction, .. } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(Error::InvalidMask(format!(
                        "fraction {fraction} is outside [0, 1]"
                    )));
                }
                Ok(())
            }
            MaskSpec::FixedSet(set) => set.validate(config),
        }
    }
}

/// `floor(fraction · n)`, tolerant of representation error such as
/// `0.29 * 100 = 28.999…`.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor().min(n as f64) as usize
}

/// Indices of the `count` smallest values, ordered by ascending
/// `(value, index)`.
pub fn lowest_indices(values: &[f32], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let cmp = |&a: &usize, &b: &usize| -> Ordering {
        values[a].total_cmp(&values[b]).then(a.cmp(&b))
    };
    let count = count.min(values.len());
    if count == 0 {
        return Vec::new();
    }
    if count < idx.len() {
        idx.select_nth_unstable_by(count - 1, cmp);
        idx.truncate(count);
    }
    idx.sort_unstable_by(cmp);
    idx
}
