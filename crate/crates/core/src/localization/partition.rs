// SPDX-License-Identifier: MIT OR Apache-2.0

//! Overlap between the neuron sets selected for different functionalities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fraction_count, NeuronSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a][b]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest off-diagonal entry.
    pub fn max_off_diagonal(&self) -> f64 {
        let mut m = 0.0f64;
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    m = m.max(*v);
                }
            }
        }
        m
    }
}

/// `|A_f ∩ A_g| / |A_f|`, pooled over layers. Every set must have the same
/// number of neurons in each layer.
pub fn partition_similarity(sets: &[NeuronSet]) -> Result<SimilarityMatrix> {
    let first = sets.first().ok_or_else(|| Error::Input("no neuron sets given".into()))?;
    let sizes: Vec<usize> = first.layers().iter().map(Vec::len).collect();
    for (i, s) in sets.iter().enumerate() {
        let other: Vec<usize> = s.layers().iter().map(Vec::len).collect();
        if other != sizes {
            return Err(Error::Dimension(format!(
                "neuron set {i} has per-layer sizes {other:?}, set 0 has {sizes:?}"
            )));
        }
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Input("neuron sets are empty".into()));
    }
    let values = sets
        .iter()
        .map(|a| {
            sets.iter()
                .map(|b| a.intersection_len(b) as f64 / total as f64)
                .collect()
        })
        .collect();
    Ok(SimilarityMatrix { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapBaseline {
    pub mean: f64,
    pub std: f64,
    /// Set size, `floor(p · d_ff)`.
    pub k: usize,
    /// Hypergeometric expectation `k / d_ff`.
    pub expected: f64,
    pub trials: usize,
}

/// Monte-Carlo overlap between two independent uniform `p`-fraction subsets
/// of `d_ff` neurons.
pub fn random_baseline(d_ff: usize, p: f64, trials: usize, seed: u64) -> Result<OverlapBaseline> {
    if trials == 0 {
        return Err(Error::Input("trials must be at least 1".into()));
    }
    let k = fraction_count(p, d_ff);
    if k == 0 {
        return Err(Error::Input(format!(
            "fraction {p} of {d_ff} neurons selects nothing"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut member = vec![false; d_ff];
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let a = rand::seq::index::sample(&mut rng, d_ff, k);
        let b = rand::seq::index::sample(&mut rng, d_ff, k);
        for i in a.iter() {
            member[i] = true;
        }
        let shared = b.iter().filter(|&i| member[i]).count();
        for i in a.iter() {
            member[i] = false;
        }
        samples.push(shared as f64 / k as f64);
    }
    let mean = samples.iter().sum::<f64>() / trials as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / trials as f64;
    Ok(OverlapBaseline {
        mean,
        std: var.sqrt(),
        k,
        expected: k as f64 / d_ff as f64,
        trials,
    })
}
