//! Test splits filtered by how strongly an item's modalities agree.

use std::fmt;
use std::str::FromStr;

use super::classifier::{train_match_classifier, ClassifierConfig};
use super::ShiftError;
use crate::dataset::{InteractionDataset, SplitTag};
use crate::features::FeatureStore;
use crate::scalar::Scalar;

/// Which end of the match-probability ranking is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OodMode {
    /// Weakest cross-modal agreement: the shifted test set.
    #[default]
    Lowest,
    /// Strongest agreement.
    Highest,
}

impl FromStr for OodMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lowest" => Ok(OodMode::Lowest),
            "highest" => Ok(OodMode::Highest),
            other => Err(format!("unknown mode `{other}` (lowest, highest)")),
        }
    }
}

impl fmt::Display for OodMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OodMode::Lowest => "lowest",
            OodMode::Highest => "highest",
        })
    }
}

/// Items appearing in the test split, ascending.
pub fn test_items(ds: &InteractionDataset) -> Vec<usize> {
    let mut seen = vec![false; ds.num_items()];
    for it in ds.tagged(SplitTag::Test) {
        seen[it.item] = true;
    }
    (0..ds.num_items()).filter(|&i| seen[i]).collect()
}

/// `round(fraction * n)` test items (at least one) from the chosen end of
/// `probs` (indexed by item), ties by ascending item index.
pub fn select_items(candidates: &[usize], probs: &[f64], fraction: f64, mode: OodMode) -> Vec<usize> {
    let n = candidates.len();
    if n == 0 {
        return Vec::new();
    }
    let keep = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| {
        let c = probs[a].total_cmp(&probs[b]);
        let c = if mode == OodMode::Highest { c.reverse() } else { c };
        c.then(a.cmp(&b))
    });
    order.truncate(keep);
    order.sort_unstable();
    order
}

/// Keeps only test interactions on selected items; the rest of the test split
/// is re-tagged `dropped`. Train and valid are untouched.
pub fn build_ood_split_from_probs(
    ds: &InteractionDataset,
    probs: &[f64],
    fraction: f64,
    mode: OodMode,
) -> Result<InteractionDataset, ShiftError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ShiftError::BadFraction(fraction));
    }
    assert_eq!(probs.len(), ds.num_items(), "one probability per item");
    let selected = select_items(&test_items(ds), probs, fraction, mode);
    if selected.is_empty() {
        return Err(ShiftError::EmptyTest);
    }
    Ok(keep_test_items(ds, &selected))
}

/// Drops test interactions whose item is not in the sorted `items` list.
pub fn keep_test_items(ds: &InteractionDataset, items: &[usize]) -> InteractionDataset {
    let tags = ds
        .interactions
        .iter()
        .zip(&ds.tags)
        .map(|(it, &t)| {
            if t == SplitTag::Test && items.binary_search(&it.item).is_err() {
                SplitTag::Dropped
            } else {
                t
            }
        })
        .collect();
    InteractionDataset { tags, ..ds.clone() }
}

/// Classifier-based split: the match classifier is fit on training items,
/// then every test item is scored on its own pair.
pub fn build_ood_split<T: Scalar>(
    ds: &InteractionDataset,
    store: &FeatureStore<T>,
    fraction: f64,
    mode: OodMode,
    config: ClassifierConfig,
    seed: u64,
) -> Result<(InteractionDataset, Vec<f64>), ShiftError> {
    let clf = train_match_classifier(store, &ds.train_items(), config, seed)?;
    let all: Vec<usize> = (0..ds.num_items()).collect();
    let probs: Vec<f64> = clf.match_probs(store, &all).iter().map(|p| p.to_f64_lossy()).collect();
    let split = build_ood_split_from_probs(ds, &probs, fraction, mode)?;
    Ok((split, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{IdMap, Interaction};

    /// One user per item, each with a train, a valid and a test interaction
    /// on consecutive items.
    fn ds(n: usize) -> InteractionDataset {
        let users = IdMap::from_ids((0..n).map(|u| format!("u{u}")));
        let items = IdMap::from_ids((0..n).map(|i| format!("i{i}")));
        let mut inter = Vec::new();
        let mut tags = Vec::new();
        for u in 0..n {
            for (k, t) in [SplitTag::Train, SplitTag::Valid, SplitTag::Test]
                .into_iter()
                .enumerate()
            {
                inter.push(Interaction {
                    user: u,
                    item: (u + k) % n,
                });
                tags.push(t);
            }
        }
        InteractionDataset::new(users, items, inter, tags).unwrap()
    }

    fn kept_items(ds: &InteractionDataset) -> Vec<usize> {
        let mut v: Vec<usize> = ds.tagged(SplitTag::Test).map(|i| i.item).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn full_fraction_is_identity() {
        let d = ds(10);
        let probs: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(build_ood_split_from_probs(&d, &probs, 1.0, OodMode::Lowest).unwrap(), d);
    }

    #[test]
    fn quantile_pick() {
        let d = ds(10);
        let probs: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let low = build_ood_split_from_probs(&d, &probs, 0.2, OodMode::Lowest).unwrap();
        assert_eq!(kept_items(&low), vec![0, 1]);
        let high = build_ood_split_from_probs(&d, &probs, 0.2, OodMode::Highest).unwrap();
        assert_eq!(kept_items(&high), vec![8, 9]);
        assert_eq!(low.count(SplitTag::Dropped), 8);
    }

    #[test]
    fn ties_by_index() {
        assert_eq!(select_items(&[0, 1, 2, 3], &[0.5; 4], 0.5, OodMode::Lowest), vec![0, 1]);
        assert_eq!(
            select_items(&[0, 1, 2, 3], &[0.5; 4], 0.5, OodMode::Highest),
            vec![0, 1]
        );
        assert_eq!(select_items(&[0, 1, 2, 3], &[0.5; 4], 0.01, OodMode::Lowest), vec![0]);
    }

    #[test]
    fn train_and_valid_untouched() {
        let d = ds(10);
        let probs: Vec<f64> = (0..10).map(|i| ((i * 7) % 10) as f64).collect();
        let out = build_ood_split_from_probs(&d, &probs, 0.3, OodMode::Lowest).unwrap();
        for t in [SplitTag::Train, SplitTag::Valid] {
            assert_eq!(out.tagged(t).collect::<Vec<_>>(), d.tagged(t).collect::<Vec<_>>());
        }
        assert_eq!(
            out.count(SplitTag::Test) + out.count(SplitTag::Dropped),
            d.count(SplitTag::Test)
        );
    }

    #[test]
    fn no_test_split_is_an_error() {
        let mut d = ds(4);
        for t in &mut d.tags {
            if *t == SplitTag::Test {
                *t = SplitTag::Train;
            }
        }
        assert!(matches!(
            build_ood_split_from_probs(&d, &[0.0; 4], 0.5, OodMode::Lowest),
            Err(ShiftError::EmptyTest)
        ));
        assert!(matches!(
            build_ood_split_from_probs(&d, &[0.0; 4], 0.0, OodMode::Lowest),
            Err(ShiftError::BadFraction(_))
        ));
    }
}
