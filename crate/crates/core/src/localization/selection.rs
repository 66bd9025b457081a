// SPDX-License-Identifier: MIT OR Apache-2.0

use super::scores::FuncScoreTable;
use crate::error::{Error, Result};
use crate::model::{fraction_count, NeuronSet, SelectionMeta};
use crate::trace::Functionality;

/// The `floor(p · d_ff)` highest-scoring neurons of every layer for `f`,
/// ties broken by ascending index.
pub fn top_fraction(table: &FuncScoreTable, f: Functionality, p: f64) -> Result<NeuronSet> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Input(format!("selection fraction {p} is outside (0, 1]")));
    }
    let k = fraction_count(p, table.d_ff());
    let layers = (0..table.n_layers())
        .map(|layer| {
            let col = table.column(layer, f);
            let mut idx: Vec<usize> = (0..col.len()).collect();
            idx.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
            idx.truncate(k);
            idx
        })
        .collect();
    Ok(NeuronSet::new(layers).with_meta(SelectionMeta {
        functionality: f,
        fraction: format!("{p}"),
        source: format!("funcscore:{}", table.provenance.trace),
    }))
}

/// Top-`p` sets for all seven functionalities, in taxonomy order.
pub fn top_fraction_all(table: &FuncScoreTable, p: f64) -> Result<Vec<NeuronSet>> {
    Functionality::ALL
        .iter()
        .map(|&f| top_fraction(table, f, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localization::scores::ScoreProvenance;
    use crate::trace::N_FUNCTIONALITIES;

    fn table(d_ff: usize, layers: usize, f: impl Fn(usize, usize) -> f64) -> FuncScoreTable {
        let mut scores = Vec::new();
        for l in 0..layers {
            for n in 0..d_ff {
                let s = f(l, n);
                scores.extend(std::iter::repeat_n(s, N_FUNCTIONALITIES));
            }
        }
        FuncScoreTable::from_scores(
            layers,
            d_ff,
            scores,
            ScoreProvenance {
                trace: "t".into(),
                taxonomy_version: "v".into(),
            },
        )
        .unwrap()
    }

    #[test]
    fn full_fraction_selects_everything() {
        let t = table(6, 2, |_, n| n as f64 / 10.0);
        let s = top_fraction(&t, Functionality::Coding, 1.0).unwrap();
        assert_eq!(s, NeuronSet::full(2, 6).with_meta(s.meta().unwrap().clone()));
    }

    #[test]
    fn five_percent_of_twenty_is_one() {
        let t = table(20, 3, |l, n| ((n * 7 + l) % 20) as f64 / 20.0);
        let s = top_fraction(&t, Functionality::Math, 0.05).unwrap();
        assert!(s.layers().iter().all(|l| l.len() == 1));
    }

    #[test]
    fn ties_prefer_low_index() {
        let t = table(5, 1, |_, n| if n >= 2 { 0.5 } else { 0.1 });
        let s = top_fraction(&t, Functionality::Coding, 0.4).unwrap();
        assert_eq!(s.layer(0), &[2, 3]);
    }

    #[test]
    fn rejects_bad_fraction() {
        let t = table(5, 1, |_, _| 0.0);
        assert!(top_fraction(&t, Functionality::Coding, 0.0).is_err());
        assert!(top_fraction(&t, Functionality::Coding, 1.5).is_err());
    }

    #[test]
    fn invariant_under_increasing_rescale() {
        let t = table(32, 2, |l, n| ((n * 13 + l * 5) % 32) as f64 / 32.0);
        let rescaled = t.map_scores(|s| s * s * 0.5 + 0.1);
        for p in [0.05, 0.25, 0.5] {
            let a = top_fraction(&t, Functionality::Writing, p).unwrap();
            let b = top_fraction(&rescaled, Functionality::Writing, p).unwrap();
            assert_eq!(a.layers(), b.layers());
        }
    }
}
