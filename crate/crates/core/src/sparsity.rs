// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation-sparsity analysis: per-neuron indicators, per-token max
//! normalisation, pooled CDFs and mask-lowest-k% loss sweeps.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{corpus_loss, fraction_count, FfnParams, MaskSpec, NeuronSet, ReferenceModel};
use crate::trace::{Functionality, InstanceRecord, N_FUNCTIONALITIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    /// `|a_i|`
    Activation,
    /// `‖a_i · W_out[:, i]‖₂`
    OutputMagnitude,
}

impl IndicatorKind {
    pub const ALL: [IndicatorKind; 2] = [IndicatorKind::Activation, IndicatorKind::OutputMagnitude];

    pub fn name(self) -> &'static str {
        match self {
            IndicatorKind::Activation => "activation",
            IndicatorKind::OutputMagnitude => "output_magnitude",
        }
    }
}

impl fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndicatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "activation" => Ok(IndicatorKind::Activation),
            "output_magnitude" | "magnitude" => Ok(IndicatorKind::OutputMagnitude),
            other => Err(Error::Input(format!("unknown indicator kind `{other}`"))),
        }
    }
}

/// Indicator values for one token of one layer.
pub fn indicator(activations: &[f32], params: &FfnParams, kind: IndicatorKind) -> Result<Vec<f32>> {
    if activations.len() != params.d_ff() {
        return Err(Error::Dimension(format!(
            "{} activations for a layer with d_ff {}",
            activations.len(),
            params.d_ff()
        )));
    }
    Ok(match kind {
        IndicatorKind::Activation => activations.iter().map(|a| a.abs()).collect(),
        IndicatorKind::OutputMagnitude => {
            indicator_with_norms(activations, &params.output_column_norms(), kind)
        }
    })
}

/// Indicator from precomputed output-column norms.
pub fn indicator_with_norms(activations: &[f32], col_norms: &[f32], kind: IndicatorKind) -> Vec<f32> {
    match kind {
        IndicatorKind::Activation => activations.iter().map(|a| a.abs()).collect(),
        IndicatorKind::OutputMagnitude => activations
            .iter()
            .zip(col_norms)
            .map(|(a, n)| (f64::from(a.abs()) * f64::from(*n)) as f32)
            .collect(),
    }
}

/// Divides by the maximum; an all-zero vector stays all-zero.
pub fn normalize(indicators: &[f32]) -> Result<Vec<f32>> {
    let mut max = 0.0f32;
    for (i, &v) in indicators.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Input(format!("indicator {i} is {v}, expected a finite value ≥ 0")));
        }
        max = max.max(v);
    }
    if max == 0.0 {
        return Ok(vec![0.0; indicators.len()]);
    }
    Ok(indicators.iter().map(|&v| (f64::from(v) / f64::from(max)) as f32).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    pub grid: Vec<f64>,
    pub cumulative_fraction: Vec<f64>,
}

impl CdfCurve {
    /// Fraction of samples at or below `x`, read off the grid.
    pub fn at(&self, x: f64) -> Option<f64> {
        self.grid
            .iter()
            .position(|g| (*g - x).abs() < 1e-12)
            .map(|i| self.cumulative_fraction[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorCdf {
    pub kind: IndicatorKind,
    pub overall: CdfCurve,
    pub per_layer: Vec<CdfCurve>,
}

/// Default CDF grid: 0.00, 0.01, …, 1.00.
pub fn default_cdf_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Default sweep fractions: 0, 0.1, …, 0.9, 0.95, 0.99.
pub fn default_sweep_fractions() -> Vec<f64> {
    let mut v: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    v.extend([0.95, 0.99]);
    v
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Input("CDF grid is empty".into()));
    }
    if grid.iter().any(|g| !(0.0..=1.0).contains(g)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input("CDF grid must be strictly ascending within [0, 1]".into()));
    }
    if *grid.last().expect("nonempty") != 1.0 {
        return Err(Error::Input("CDF grid must end at 1.0".into()));
    }
    Ok(())
}

/// Histogram of normalized indicator values over grid cells, one per layer.
#[derive(Debug, Clone)]
pub struct CdfAccumulator {
    grid: Vec<f64>,
    counts: Vec<Vec<u64>>,
}

impl CdfAccumulator {
    pub fn new(grid: &[f64], n_layers: usize) -> Result<Self> {
        check_grid(grid)?;
        Ok(Self {
            grid: grid.to_vec(),
            counts: vec![vec![0; grid.len()]; n_layers],
        })
    }

    /// Adds one token's raw indicators for `layer`; normalizes internally.
    pub fn add_token(&mut self, layer: usize, indicators: &[f32]) -> Result<()> {
        let normalized = normalize(indicators)?;
        let counts = &mut self.counts[layer];
        for v in normalized {
            let v = f64::from(v);
            // first grid point ≥ v
            let cell = self.grid.partition_point(|g| *g < v);
            counts[cell.min(self.grid.len() - 1)] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &CdfAccumulator) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn finish(&self, kind: IndicatorKind) -> Result<IndicatorCdf> {
        let curve = |counts: &[u64]| -> Result<CdfCurve> {
            let total: u64 = counts.iter().sum();
            if total == 0 {
                return Err(Error::Input("no indicator samples were pooled".into()));
            }
            let mut running = 0u64;
            let cumulative_fraction = counts
                .iter()
                .map(|c| {
                    running += c;
                    running as f64 / total as f64
                })
                .collect();
            Ok(CdfCurve {
                grid: self.grid.clone(),
                cumulative_fraction,
            })
        };
        let mut pooled = vec![0u64; self.grid.len()];
        for layer in &self.counts {
            for (p, c) in pooled.iter_mut().zip(layer) {
                *p += c;
            }
        }
        Ok(IndicatorCdf {
            kind,
            overall: curve(&pooled)?,
            per_layer: self.counts.iter().map(|c| curve(c)).collect::<Result<_>>()?,
        })
    }
}

/// Pools normalized indicators over every prompt token and neuron of the
/// corpus and returns the empirical CDF on `grid`.
pub fn indicator_cdf(
    model: &ReferenceModel,
    corpus: &[InstanceRecord],
    kind: IndicatorKind,
    grid: &[f64],
) -> Result<IndicatorCdf> {
    if corpus.is_empty() {
        return Err(Error::Input("corpus is empty".into()));
    }
    let n_layers = model.config().n_layers;
    let template = CdfAccumulator::new(grid, n_layers)?;
    let parts: Vec<CdfAccumulator> = corpus
        .par_iter()
        .map(|inst| {
            let acts = model.capture(&inst.prompt_tokens)?;
            let mut acc = template.clone();
            for t in 0..acts.n_tokens() {
                for layer in 0..n_layers {
                    let ind =
                        indicator_with_norms(acts.get(t, layer), model.output_column_norms(layer), kind);
                    acc.add_token(layer, &ind)?;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = template;
    for p in &parts {
        total.merge(p);
    }
    total.finish(kind)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub kind: IndicatorKind,
    pub fractions: Vec<f64>,
    /// Pooled response-token cross-entropy at each fraction.
    pub loss: Vec<f64>,
    /// `[fraction][functionality]`; `None` where the corpus has no instance.
    pub per_functionality: Vec<[Option<f64>; N_FUNCTIONALITIES]>,
}

impl SweepCurve {
    pub fn loss_at(&self, fraction: f64) -> Option<f64> {
        self.fractions
            .iter()
            .position(|f| (*f - fraction).abs() < 1e-12)
            .map(|i| self.loss[i])
    }

    /// Largest fraction `k` such that every swept fraction up to `k` keeps
    /// the loss within `rel_tol` of the unmasked loss.
    pub fn tolerated_fraction(&self, rel_tol: f64) -> f64 {
        let base = self.loss_at(0.0).unwrap_or(self.loss[0]);
        let mut best = 0.0;
        for (f, l) in self.fractions.iter().zip(&self.loss) {
            if *l > base * (1.0 + rel_tol) {
                break;
            }
            best = *f;
        }
        best
    }
}

fn check_fractions(fractions: &[f64], require_zero: bool) -> Result<()> {
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Input(format!("fraction {f} is outside [0, 1]")));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input("fractions must be strictly ascending".into()));
    }
    if require_zero && fractions.first() != Some(&0.0) {
        return Err(Error::Input("fractions must start at 0".into()));
    }
    Ok(())
}

/// Loss after masking the lowest-indicator fraction at every token and
/// layer, for each requested fraction.
pub fn mask_sweep(
    model: &ReferenceModel,
    corpus: &[InstanceRecord],
    kind: IndicatorKind,
    fractions: &[f64],
) -> Result<SweepCurve> {
    if corpus.is_empty() {
        return Err(Error::Input("corpus is empty".into()));
    }
    check_fractions(fractions, true)?;
    let mut loss = Vec::with_capacity(fractions.len());
    let mut per_functionality = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let mask = (fraction > 0.0).then(|| MaskSpec::lowest(fraction, kind));
        let cl = corpus_loss(model, corpus, mask.as_ref())?;
        loss.push(cl.mean().expect("nonempty corpus"));
        per_functionality.push(Functionality::ALL.map(|f| cl.functionality(f).mean()));
    }
    Ok(SweepCurve {
        kind,
        fractions: fractions.to_vec(),
        loss,
        per_functionality,
    })
}

/// A fixed, uniformly random `floor(fraction · d_ff)` neurons per layer.
pub fn random_neuron_set(n_layers: usize, d_ff: usize, fraction: f64, seed: u64) -> NeuronSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = fraction_count(fraction, d_ff);
    NeuronSet::new(
        (0..n_layers)
            .map(|_| rand::seq::index::sample(&mut rng, d_ff, k).into_vec())
            .collect(),
    )
}

/// Mean loss over `seeds` random fixed masks at each fraction.
pub fn random_mask_sweep(
    model: &ReferenceModel,
    corpus: &[InstanceRecord],
    fractions: &[f64],
    seeds: &[u64],
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::Input("corpus is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Input("at least one seed is required".into()));
    }
    check_fractions(fractions, false)?;
    let cfg = model.config();
    fractions
        .iter()
        .map(|&fraction| {
            let mut sum = 0.0;
            for &seed in seeds {
                let set = random_neuron_set(cfg.n_layers, cfg.d_ff, fraction, seed);
                let cl = corpus_loss(model, corpus, Some(&MaskSpec::FixedSet(set)))?;
                sum += cl.mean().expect("nonempty corpus");
            }
            Ok(sum / seeds.len() as f64)
        })
        .collect()
}
