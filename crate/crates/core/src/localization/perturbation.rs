// SPDX-License-Identifier: MIT OR Apache-2.0

//! Perturbation study: zero one functionality's selected neurons and
//! measure the relative perplexity change on every functionality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{corpus_loss, MaskSpec, NeuronSet, ReferenceModel};
use crate::trace::{Functionality, InstanceRecord, N_FUNCTIONALITIES};

/// Rows are the pruned functionality, columns the evaluated one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationMatrix {
    /// Unpruned perplexity per evaluated functionality.
    pub origin_ppl: [f64; N_FUNCTIONALITIES],
    pub pruned_ppl: [[f64; N_FUNCTIONALITIES]; N_FUNCTIONALITIES],
    /// `(PPL_pruned − PPL_origin) / PPL_origin`
    pub values: [[f64; N_FUNCTIONALITIES]; N_FUNCTIONALITIES],
}

impl PerturbationMatrix {
    /// Entry in percent.
    pub fn percent(&self, pruned: Functionality, evaluated: Functionality) -> f64 {
        100.0 * self.values[pruned.index()][evaluated.index()]
    }

    /// Evaluated functionality with the largest increase for one pruned row.
    pub fn row_argmax(&self, pruned: Functionality) -> Functionality {
        let row = &self.values[pruned.index()];
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        Functionality::ALL[best]
    }
}

fn per_functionality_ppl(
    model: &ReferenceModel,
    corpus: &[InstanceRecord],
    mask: Option<&MaskSpec>,
) -> Result<[f64; N_FUNCTIONALITIES]> {
    let cl = corpus_loss(model, corpus, mask)?;
    let mut out = [0.0; N_FUNCTIONALITIES];
    for f in Functionality::ALL {
        out[f.index()] = cl
            .functionality(f)
            .perplexity()
            .ok_or(Error::MissingFunctionality(f))?;
    }
    Ok(out)
}

/// Prunes each functionality's set in turn and evaluates every
/// functionality's perplexity on `corpus`.
pub fn prune_and_eval(
    model: &ReferenceModel,
    sets: &[NeuronSet],
    corpus: &[InstanceRecord],
) -> Result<PerturbationMatrix> {
    if sets.len() != N_FUNCTIONALITIES {
        return Err(Error::Input(format!(
            "expected one neuron set per functionality, got {}",
            sets.len()
        )));
    }
    if corpus.is_empty() {
        return Err(Error::Input("corpus is empty".into()));
    }
    for f in Functionality::ALL {
        if !corpus.iter().any(|i| i.labels.contains(f)) {
            return Err(Error::MissingFunctionality(f));
        }
    }
    for set in sets {
        set.validate(model.config())?;
    }
    let origin_ppl = per_functionality_ppl(model, corpus, None)?;
    let mut pruned_ppl = [[0.0; N_FUNCTIONALITIES]; N_FUNCTIONALITIES];
    let mut values = [[0.0; N_FUNCTIONALITIES]; N_FUNCTIONALITIES];
    for (row, set) in sets.iter().enumerate() {
        pruned_ppl[row] = if set.is_empty() {
            origin_ppl
        } else {
            per_functionality_ppl(model, corpus, Some(&MaskSpec::FixedSet(set.clone())))?
        };
        for col in 0..N_FUNCTIONALITIES {
            values[row][col] = (pruned_ppl[row][col] - origin_ppl[col]) / origin_ppl[col];
        }
    }
    Ok(PerturbationMatrix {
        origin_ppl,
        pruned_ppl,
        values,
    })
}
