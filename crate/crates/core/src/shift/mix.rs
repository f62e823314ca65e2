//! Two datasets split at different ratios and merged into one.

use log::warn;
use ndarray::{s, Array2};

use super::ShiftError;
use crate::dataset::{random_split, DataError, IdMap, Interaction, InteractionDataset, SplitRatios};
use crate::features::{FeatureStore, Modality};
use crate::scalar::Scalar;

pub const PREFIX_A: &str = "A:";
pub const PREFIX_B: &str = "B:";

/// Splits each dataset per user at its own ratios and unions the result.
/// User and item ids are namespaced with `A:` / `B:`; items of `b` follow
/// those of `a`.
pub fn mix_datasets(
    a: &InteractionDataset,
    b: &InteractionDataset,
    ratios_a: (f64, f64, f64),
    ratios_b: (f64, f64, f64),
    seed: u64,
) -> Result<InteractionDataset, ShiftError> {
    let ra = SplitRatios::new(ratios_a.0, ratios_a.1, ratios_a.2)?;
    let rb = SplitRatios::new(ratios_b.0, ratios_b.1, ratios_b.2)?;
    let sa = random_split(a, ra, seed);
    let sb = random_split(b, rb, seed.wrapping_add(1));
    let prefixed = |prefix: &str, ids: &IdMap| ids.ids().iter().map(|x| format!("{prefix}{x}")).collect::<Vec<_>>();
    let users = IdMap::from_ids(
        prefixed(PREFIX_A, &sa.users)
            .into_iter()
            .chain(prefixed(PREFIX_B, &sb.users)),
    );
    let items = IdMap::from_ids(
        prefixed(PREFIX_A, &sa.items)
            .into_iter()
            .chain(prefixed(PREFIX_B, &sb.items)),
    );
    let (nu, ni) = (sa.num_users(), sa.num_items());
    let interactions = sa
        .interactions
        .iter()
        .copied()
        .chain(sb.interactions.iter().map(|it| Interaction {
            user: it.user + nu,
            item: it.item + ni,
        }))
        .collect();
    let tags = sa.tags.iter().chain(&sb.tags).copied().collect();
    Ok(InteractionDataset::new(users, items, interactions, tags)?)
}

/// Stacks item features of `a` above those of `b`, modality by modality.
/// Narrower matrices are zero-padded on the right.
pub fn mix_features<T: Scalar>(a: &FeatureStore<T>, b: &FeatureStore<T>) -> Result<FeatureStore<T>, ShiftError> {
    if a.num_modalities() != b.num_modalities() {
        return Err(ShiftError::Data(DataError::Feature {
            modality: "*".into(),
            msg: format!("{} vs {} modalities", a.num_modalities(), b.num_modalities()),
        }));
    }
    let (na, nb) = (a.num_items(), b.num_items());
    let mods = a
        .modalities()
        .iter()
        .zip(b.modalities())
        .map(|(ma, mb)| {
            let d = ma.dim().max(mb.dim());
            if ma.dim() != mb.dim() {
                warn!(
                    "modality {}: padding {} vs {} dims with zeros to {d}",
                    ma.name,
                    ma.dim(),
                    mb.dim()
                );
            }
            let mut values = Array2::zeros((na + nb, d));
            values.slice_mut(s![..na, ..ma.dim()]).assign(&ma.values);
            values.slice_mut(s![na.., ..mb.dim()]).assign(&mb.values);
            Modality {
                name: ma.name.clone(),
                values,
            }
        })
        .collect();
    Ok(FeatureStore::new(na + nb, mods)?)
}
