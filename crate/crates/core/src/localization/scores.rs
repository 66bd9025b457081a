// SPDX-License-Identifier: MIT OR Apache-2.0

//! Functionality scores: the average precision of a neuron's per-instance
//! mean |activation| against one-vs-rest functionality labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ap::{ap_of_ranking, ranking};
use crate::error::{Error, Result};
use crate::trace::{ActivationTrace, Functionality, FunctionalityTaxonomy, N_FUNCTIONALITIES};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreOptions {
    /// Score functionalities without positives as 0 and flag them instead of
    /// failing.
    pub allow_missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreProvenance {
    pub trace: String,
    pub taxonomy_version: String,
}

/// `[layer][neuron][functionality]` scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuncScoreTable {
    n_layers: usize,
    d_ff: usize,
    scores: Vec<f64>,
    /// Functionalities whose scores are undefined (no positive instance).
    pub undefined: Vec<Functionality>,
    pub provenance: ScoreProvenance,
}

impl FuncScoreTable {
    pub fn from_scores(
        n_layers: usize,
        d_ff: usize,
        scores: Vec<f64>,
        provenance: ScoreProvenance,
    ) -> Result<Self> {
        if scores.len() != n_layers * d_ff * N_FUNCTIONALITIES {
            return Err(Error::Dimension(format!(
                "{} scores for {n_layers} × {d_ff} × {N_FUNCTIONALITIES}",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidValue("functionality scores must lie in [0, 1]".into()));
        }
        Ok(Self {
            n_layers,
            d_ff,
            scores,
            undefined: Vec::new(),
            provenance,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn d_ff(&self) -> usize {
        self.d_ff
    }

    pub fn get(&self, layer: usize, neuron: usize, f: Functionality) -> f64 {
        self.scores[(layer * self.d_ff + neuron) * N_FUNCTIONALITIES + f.index()]
    }

    /// Scores of every neuron in `layer` for `f`.
    pub fn column(&self, layer: usize, f: Functionality) -> Vec<f64> {
        (0..self.d_ff).map(|n| self.get(layer, n, f)).collect()
    }

    /// Same table with every score passed through `map`. Used to check rank
    /// invariance; the caller keeps results inside `[0, 1]`.
    pub fn map_scores(&self, map: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.scores.iter_mut().for_each(|s| *s = map(*s));
        out
    }
}

/// Builds the score table from per-instance summaries.
pub fn func_score_table(trace: &ActivationTrace, taxonomy: &FunctionalityTaxonomy) -> Result<FuncScoreTable> {
    func_score_table_with(trace, taxonomy, ScoreOptions::default())
}

pub fn func_score_table_with(
    trace: &ActivationTrace,
    taxonomy: &FunctionalityTaxonomy,
    options: ScoreOptions,
) -> Result<FuncScoreTable> {
    let n = trace.len();
    if n == 0 {
        return Err(Error::Input("trace has no instances".into()));
    }
    let labels = one_vs_rest(trace);
    let mut undefined = Vec::new();
    for f in Functionality::ALL {
        if !labels[f.index()].iter().any(|l| *l) {
            if !options.allow_missing {
                return Err(Error::MissingFunctionality(f));
            }
            log::warn!("functionality `{f}` has no positive instance; scoring it as 0");
            undefined.push(f);
        }
    }
    let (n_layers, d_ff) = (trace.n_layers(), trace.d_ff());
    let per_neuron: Vec<[f64; N_FUNCTIONALITIES]> = (0..n_layers * d_ff)
        .into_par_iter()
        .map(|cell| {
            let (layer, neuron) = (cell / d_ff, cell % d_ff);
            let values: Vec<f64> = (0..n)
                .map(|i| f64::from(trace.summary(i, layer)[neuron]))
                .collect();
            let order = ranking(&values);
            Functionality::ALL.map(|f| ap_of_ranking(&order, &labels[f.index()]).unwrap_or(0.0))
        })
        .collect();
    let mut table = FuncScoreTable::from_scores(
        n_layers,
        d_ff,
        per_neuron.into_iter().flatten().collect(),
        ScoreProvenance {
            trace: trace.header().provenance.clone(),
            taxonomy_version: taxonomy.version().to_string(),
        },
    )?;
    table.undefined = undefined;
    Ok(table)
}

fn one_vs_rest(trace: &ActivationTrace) -> [Vec<bool>; N_FUNCTIONALITIES] {
    let labels = trace.labels();
    Functionality::ALL.map(|f| labels.iter().map(|l| l.contains(f)).collect())
}

/// Mean AP of `n_neurons` neurons with fresh uniform-random scores, per
/// functionality.
pub fn random_activation_scores(
    trace: &ActivationTrace,
    n_neurons: usize,
    seed: u64,
) -> [Option<f64>; N_FUNCTIONALITIES] {
    let labels = one_vs_rest(trace);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = [0.0f64; N_FUNCTIONALITIES];
    for _ in 0..n_neurons {
        let values: Vec<f64> = (0..trace.len()).map(|_| rng.random::<f64>()).collect();
        let order = ranking(&values);
        for f in Functionality::ALL {
            sums[f.index()] += ap_of_ranking(&order, &labels[f.index()]).unwrap_or(f64::NAN);
        }
    }
    Functionality::ALL.map(|f| {
        let m = sums[f.index()] / n_neurons.max(1) as f64;
        m.is_finite().then_some(m)
    })
}

/// Per-layer statistics of one functionality column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScoreSummary {
    pub layer: usize,
    pub functionality: Functionality,
    pub best: f64,
    /// Score at the top-5‰ rank, `max(1, ceil(0.005 · d_ff))`.
    pub best_5_permille: f64,
    pub mean: f64,
    pub random_baseline: Option<f64>,
}

/// Best, top-5‰, mean and random-activation baseline for every layer and
/// functionality.
pub fn summarize_scores(
    table: &FuncScoreTable,
    trace: &ActivationTrace,
    seed: u64,
) -> Vec<LayerScoreSummary> {
    let rank = ((0.005 * table.d_ff() as f64).ceil() as usize).max(1);
    let mut out = Vec::new();
    for layer in 0..table.n_layers() {
        let baseline = random_activation_scores(trace, table.d_ff(), seed.wrapping_add(layer as u64));
        for f in Functionality::ALL {
            let mut col = table.column(layer, f);
            col.sort_unstable_by(|a, b| b.total_cmp(a));
            out.push(LayerScoreSummary {
                layer,
                functionality: f,
                best: col[0],
                best_5_permille: col[rank.min(col.len()) - 1],
                mean: col.iter().sum::<f64>() / col.len() as f64,
                random_baseline: baseline[f.index()],
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localization::average_precision;
    use crate::trace::{LabelSet, TraceHeader, TraceInstance, TRACE_VERSION};

    fn trace(labels: &[Functionality], summary: Vec<f32>, d_ff: usize) -> ActivationTrace {
        let instances = labels
            .iter()
            .enumerate()
            .map(|(i, &f)| TraceInstance {
                id: format!("i{i}"),
                labels: LabelSet::single(f),
                n_prompt_tokens: 1,
            })
            .collect();
        ActivationTrace::new(
            TraceHeader {
                version: TRACE_VERSION,
                n_layers: 1,
                d_ff,
                provenance: "test".into(),
            },
            instances,
            summary,
            None,
        )
        .unwrap()
    }

    fn all_seven_twice() -> Vec<Functionality> {
        Functionality::ALL.iter().chain(Functionality::ALL.iter()).copied().collect()
    }

    #[test]
    fn perfect_coding_neuron_scores_one() {
        let labels = all_seven_twice();
        // neuron 0: high exactly on coding; neuron 1: constant
        let summary: Vec<f32> = labels
            .iter()
            .flat_map(|&f| [if f == Functionality::Coding { 5.0 } else { 1.0 }, 2.0])
            .collect();
        let t = trace(&labels, summary, 2);
        let table = func_score_table(&t, &FunctionalityTaxonomy::standard()).unwrap();
        assert_eq!(table.get(0, 0, Functionality::Coding), 1.0);
        // constant neuron: tie group ranked by index; compare with direct AP
        for f in Functionality::ALL {
            let l: Vec<bool> = labels.iter().map(|g| *g == f).collect();
            let expected = average_precision(&vec![2.0f64; labels.len()], &l).unwrap();
            assert_eq!(table.get(0, 1, f), expected);
        }
        assert_eq!(table.provenance.taxonomy_version, FunctionalityTaxonomy::STANDARD_VERSION);
    }

    #[test]
    fn missing_functionality() {
        let labels = vec![Functionality::Coding, Functionality::Math];
        let t = trace(&labels, vec![1.0, 2.0], 1);
        let tax = FunctionalityTaxonomy::standard();
        assert!(matches!(
            func_score_table(&t, &tax),
            Err(Error::MissingFunctionality(Functionality::Linguistic))
        ));
        let lenient = func_score_table_with(&t, &tax, ScoreOptions { allow_missing: true }).unwrap();
        assert_eq!(lenient.undefined.len(), 5);
        assert_eq!(lenient.get(0, 0, Functionality::Writing), 0.0);
    }

    #[test]
    fn summary_statistics() {
        let labels = all_seven_twice();
        let d_ff = 3;
        let summary: Vec<f32> = labels
            .iter()
            .enumerate()
            .flat_map(|(i, &f)| [if f == Functionality::Math { 9.0 } else { 0.0 }, i as f32, 1.0])
            .collect();
        let t = trace(&labels, summary, d_ff);
        let table = func_score_table(&t, &FunctionalityTaxonomy::standard()).unwrap();
        let s = summarize_scores(&table, &t, 0);
        assert_eq!(s.len(), 7);
        let math = &s[Functionality::Math.index()];
        assert_eq!(math.best, 1.0);
        assert_eq!(math.best_5_permille, 1.0);
        assert!(math.mean <= math.best);
        assert!(math.random_baseline.is_some());
    }

    #[test]
    fn random_neurons_score_near_prevalence() {
        use rand::{Rng, SeedableRng};
        let labels: Vec<Functionality> = (0..700).map(|i| Functionality::ALL[i % 7]).collect();
        let d_ff = 1000;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let summary: Vec<f32> = (0..labels.len() * d_ff).map(|_| rng.random::<f32>()).collect();
        let t = trace(&labels, summary, d_ff);
        let table = func_score_table(&t, &FunctionalityTaxonomy::standard()).unwrap();
        for f in Functionality::ALL {
            let col = table.column(0, f);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!((mean - 1.0 / 7.0).abs() <= 0.05, "{f}: {mean}");
        }
        let fresh = random_activation_scores(&t, 1000, 9);
        for m in fresh {
            assert!((m.unwrap() - 1.0 / 7.0).abs() <= 0.05);
        }
    }
}
