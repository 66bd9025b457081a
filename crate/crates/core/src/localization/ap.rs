// SPDX-License-Identifier: MIT OR Apache-2.0

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Ranked-retrieval average precision.
///
/// Items are ranked by descending score, ties broken by ascending index;
/// AP is `Σ_k P@k · ΔR@k`, which is the mean of `P@k` over the ranks `k`
/// holding a positive. No interpolation.
pub fn average_precision<S: Copy + Into<f64>>(scores: &[S], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Input("average precision of an empty list".into()));
    }
    let values: Vec<f64> = scores.iter().map(|&s| s.into()).collect();
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Input("scores contain NaN".into()));
    }
    ap_of_ranking(&ranking(&values), labels).ok_or(Error::UndefinedAveragePrecision)
}

/// Indices ordered by descending value, then ascending index.
pub(crate) fn ranking(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// AP for a precomputed ranking; `None` without positives.
pub(crate) fn ap_of_ranking(order: &[usize], labels: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_separation() {
        assert_eq!(average_precision(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
    }

    #[test]
    fn all_positive_is_one() {
        assert_eq!(average_precision(&[0.3, 0.2, 0.9, 0.4], &[true; 4]).unwrap(), 1.0);
    }

    #[test]
    fn three_item_example() {
        // ranking: idx1 (0.9, neg), idx2 (0.5, pos), idx0 (0.3, pos)
        // P@2 = 1/2, P@3 = 2/3 → AP = (1/2 + 2/3) / 2 = 7/12
        let ap = average_precision(&[0.3, 0.9, 0.5], &[true, false, true]).unwrap();
        assert!((ap - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn ties_resolve_by_index() {
        // constant scores keep index order: positives at ranks 2 and 3
        let ap = average_precision(&[1.0f32; 3], &[false, true, true]).unwrap();
        assert!((ap - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            average_precision(&[0.1, 0.2], &[false, false]),
            Err(Error::UndefinedAveragePrecision)
        ));
        assert!(average_precision(&[0.1], &[true, false]).is_err());
        assert!(average_precision::<f64>(&[], &[]).is_err());
        assert!(average_precision(&[f64::NAN], &[true]).is_err());
    }

    proptest! {
        #[test]
        fn in_unit_interval_and_rank_invariant(
            data in prop::collection::vec((-1e3f64..1e3, any::<bool>()), 1..40)
        ) {
            let (scores, labels): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
            prop_assume!(labels.iter().any(|l| *l));
            let ap = average_precision(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
            let shifted: Vec<f64> = scores.iter().map(|s| (s / 1e3).exp() * 3.0 + 1.0).collect();
            let ap2 = average_precision(&shifted, &labels).unwrap();
            prop_assert_eq!(ap, ap2);
        }
    }
}
