//! Synthetic two-regime multimodal data with a controllable spurious
//! correlation between modalities.
//!
//! Every item has a causal factor `z_c` and a spurious factor
//! `z_s = rho * z_c + sqrt(1 - rho^2) * eps`. The causal modality is a random
//! linear lift of `z_c` plus noise; every other modality lifts `z_s`. Users
//! only care about `z_c`: user `u` picks its items without replacement with
//! probability proportional to `exp(beta * theta_u . z_c / sqrt(k))`.
//! Most items use `rho_train`; a `shifted_fraction` of them use `rho_test`.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::ood::keep_test_items;
use super::ShiftError;
use crate::dataset::{DataError, IdMap, Interaction, InteractionDataset, SplitRatios, SplitTag};
use crate::features::{save_binary, FeatureStore, Modality};
use crate::rng::{stream, substream, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_items: usize,
    /// Feature dimension per modality (at least two modalities).
    pub dims: Vec<usize>,
    pub causal: usize,
    pub rho_train: f64,
    pub rho_test: f64,
    pub interactions_per_user: usize,
    pub seed: u64,
    pub latent_dim: usize,
    /// Share of items drawn with `rho_test`.
    pub shifted_fraction: f64,
    /// Standard deviation of the additive feature noise, causal modality.
    pub causal_noise: f64,
    /// Standard deviation of the additive feature noise, other modalities.
    pub spurious_noise: f64,
    /// Preference sharpness.
    pub beta: f64,
    /// When set, every interaction on a shifted item is a test interaction,
    /// so shifted items are never seen in training.
    pub cold_shifted: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_users: 2000,
            num_items: 1000,
            dims: vec![64, 64],
            causal: 0,
            rho_train: 0.9,
            rho_test: 0.0,
            interactions_per_user: 20,
            seed: 0,
            latent_dim: 8,
            shifted_fraction: 0.2,
            causal_noise: 0.5,
            spurious_noise: 0.1,
            beta: 4.0,
            cold_shifted: false,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), ShiftError> {
        let bad = |m: String| Err(ShiftError::BadSpec(m));
        if self.num_users == 0 || self.num_items == 0 {
            return Err(ShiftError::Data(DataError::Empty));
        }
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return bad("need at least two modalities of positive dimension".into());
        }
        if self.causal >= self.dims.len() {
            return bad(format!("causal modality {} out of range", self.causal));
        }
        for r in [self.rho_train, self.rho_test] {
            if !(-1.0..=1.0).contains(&r) {
                return bad(format!("correlation {r} outside [-1, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.shifted_fraction) {
            return bad("shifted_fraction outside [0, 1]".into());
        }
        if self.latent_dim == 0 || self.interactions_per_user == 0 {
            return bad("latent_dim and interactions_per_user must be positive".into());
        }
        if !(self.causal_noise >= 0.0 && self.spurious_noise >= 0.0 && self.beta.is_finite()) {
            return bad("noise must be >= 0 and beta finite".into());
        }
        Ok(())
    }

    /// `key = value` provenance record.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let dims: Vec<String> = self.dims.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "num_users = {}", self.num_users);
        let _ = writeln!(s, "num_items = {}", self.num_items);
        let _ = writeln!(s, "dims = [{}]", dims.join(", "));
        let _ = writeln!(s, "causal = {}", self.causal);
        let _ = writeln!(s, "rho_train = {}", self.rho_train);
        let _ = writeln!(s, "rho_test = {}", self.rho_test);
        let _ = writeln!(s, "interactions_per_user = {}", self.interactions_per_user);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "latent_dim = {}", self.latent_dim);
        let _ = writeln!(s, "shifted_fraction = {}", self.shifted_fraction);
        let _ = writeln!(s, "causal_noise = {}", self.causal_noise);
        let _ = writeln!(s, "spurious_noise = {}", self.spurious_noise);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "cold_shifted = {}", self.cold_shifted);
        s
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData<T> {
    /// Interactions tagged train / valid / test.
    pub dataset: InteractionDataset,
    pub features: FeatureStore<T>,
    /// Whether each item was drawn with `rho_test`.
    pub shifted: Vec<bool>,
    pub causal_factors: Array2<f64>,
    pub spurious_factors: Array2<f64>,
}

impl<T: Scalar> SyntheticData<T> {
    pub fn shifted_items(&self) -> Vec<usize> {
        (0..self.shifted.len()).filter(|&i| self.shifted[i]).collect()
    }

    /// Test interactions restricted to shifted items.
    pub fn ood_view(&self) -> InteractionDataset {
        keep_test_items(&self.dataset, &self.shifted_items())
    }

    /// Test interactions restricted to unshifted items.
    pub fn iid_view(&self) -> InteractionDataset {
        let items: Vec<usize> = (0..self.shifted.len()).filter(|&i| !self.shifted[i]).collect();
        keep_test_items(&self.dataset, &items)
    }

    /// Writes `interactions.tsv`, `items.tsv`, one `<modality>.bin` per
    /// modality, `item_regime.tsv` and `spec.toml`.
    pub fn write(&self, spec: &SyntheticSpec, dir: &Path) -> Result<Vec<std::path::PathBuf>, DataError> {
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        let mut written = Vec::new();
        let mut text = |name: &str, f: &dyn Fn(&mut dyn Write) -> std::io::Result<()>| -> Result<(), DataError> {
            let path = dir.join(name);
            let file = File::create(&path).map_err(|e| DataError::io(&path, e))?;
            let mut out = BufWriter::new(file);
            f(&mut out)
                .and_then(|_| out.flush())
                .map_err(|e| DataError::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        text("interactions.tsv", &|o| self.dataset.write_tagged(o))?;
        text("items.tsv", &|o| {
            for id in self.dataset.items.ids() {
                writeln!(o, "{id}")?;
            }
            Ok(())
        })?;
        text("item_regime.tsv", &|o| {
            for (id, &s) in self.dataset.items.ids().iter().zip(&self.shifted) {
                writeln!(o, "{id}\t{}", if s { "shifted" } else { "train" })?;
            }
            Ok(())
        })?;
        text("spec.toml", &|o| o.write_all(spec.to_toml().as_bytes()))?;
        for m in self.features.modalities() {
            let path = dir.join(format!("{}.bin", m.name));
            save_binary(&m.values, &path)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Name of modality `m` in generated stores.
pub fn modality_name(m: usize, causal: usize) -> String {
    if m == causal {
        "causal".to_owned()
    } else {
        format!("spurious{m}")
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

pub fn gen_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticData<T>, ShiftError> {
    spec.validate()?;
    let mut rng = substream(spec.seed, stream::DATASET);
    let (nu, ni, k) = (spec.num_users, spec.num_items, spec.latent_dim);

    let num_shifted = (spec.shifted_fraction * ni as f64).round() as usize;
    let mut order: Vec<usize> = (0..ni).collect();
    order.shuffle(&mut rng);
    let mut shifted = vec![false; ni];
    for &i in &order[..num_shifted] {
        shifted[i] = true;
    }

    let causal = gaussian(ni, k, &mut rng);
    let eps = gaussian(ni, k, &mut rng);
    let mut spurious = Array2::zeros((ni, k));
    for i in 0..ni {
        let rho = if shifted[i] { spec.rho_test } else { spec.rho_train };
        let c = (1.0 - rho * rho).max(0.0).sqrt();
        for j in 0..k {
            spurious[[i, j]] = rho * causal[[i, j]] + c * eps[[i, j]];
        }
    }

    let scale = 1.0 / (k as f64).sqrt();
    let mods = spec
        .dims
        .iter()
        .enumerate()
        .map(|(m, &dm)| {
            let (factors, noise) = if m == spec.causal {
                (&causal, spec.causal_noise)
            } else {
                (&spurious, spec.spurious_noise)
            };
            let lift = gaussian(k, dm, &mut rng) * scale;
            let values = factors.dot(&lift) + gaussian(ni, dm, &mut rng) * noise;
            Modality {
                name: modality_name(m, spec.causal),
                values: values.mapv(T::lit),
            }
        })
        .collect();
    let features = FeatureStore::new(ni, mods)?;

    let tastes = gaussian(nu, k, &mut rng);
    let affinity = tastes.dot(&causal.t()) * (spec.beta * scale);
    let per_user = spec.interactions_per_user.min(ni.saturating_sub(1)).max(1);
    let ratios = SplitRatios::RANDOM;
    let mut interactions = Vec::with_capacity(nu * per_user);
    let mut tags = Vec::with_capacity(nu * per_user);
    for u in 0..nu {
        // Gumbel top-k: sampling without replacement from softmax(affinity).
        let mut keys: Vec<(f64, usize)> = (0..ni)
            .map(|i| {
                let g: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                (affinity[[u, i]] - (-g.ln()).ln(), i)
            })
            .collect();
        keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut picked: Vec<usize> = keys[..per_user].iter().map(|&(_, i)| i).collect();
        picked.shuffle(&mut rng);
        let (warm, cold): (Vec<usize>, Vec<usize>) =
            picked.into_iter().partition(|&i| !(spec.cold_shifted && shifted[i]));
        let (train, valid, _) = if warm.len() >= crate::dataset::MIN_SPLIT_INTERACTIONS {
            ratios.counts(warm.len())
        } else {
            (warm.len(), 0, 0)
        };
        for (pos, &i) in warm.iter().enumerate() {
            interactions.push(Interaction { user: u, item: i });
            tags.push(if pos < train {
                SplitTag::Train
            } else if pos < train + valid {
                SplitTag::Valid
            } else {
                SplitTag::Test
            });
        }
        for &i in &cold {
            interactions.push(Interaction { user: u, item: i });
            tags.push(SplitTag::Test);
        }
    }
    let users = IdMap::from_ids((0..nu).map(|u| format!("u{u}")));
    let items = IdMap::from_ids((0..ni).map(|i| format!("i{i}")));
    let dataset = InteractionDataset::new(users, items, interactions, tags)?;
    Ok(SyntheticData {
        dataset,
        features,
        shifted,
        causal_factors: causal,
        spurious_factors: spurious,
    })
}

/// Pearson correlation between the flattened factor rows of `items`.
pub fn factor_correlation(a: &Array2<f64>, b: &Array2<f64>, items: &[usize]) -> f64 {
    let xs: Vec<f64> = items.iter().flat_map(|&i| a.row(i).to_vec()).collect();
    let ys: Vec<f64> = items.iter().flat_map(|&i| b.row(i).to_vec()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shift::classifier::{train_match_classifier, ClassifierConfig};

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_users: 60,
            num_items: 200,
            dims: vec![8, 8],
            interactions_per_user: 10,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn reproducible() {
        let a = gen_synthetic::<f64>(&small(3)).unwrap();
        let b = gen_synthetic::<f64>(&small(3)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.features, b.features);
        let c = gen_synthetic::<f64>(&small(4)).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn shifted_items_decorrelated() {
        let spec = SyntheticSpec {
            num_items: 1000,
            ..small(1)
        };
        let d = gen_synthetic::<f64>(&spec).unwrap();
        let shifted = d.shifted_items();
        assert_eq!(shifted.len(), 200);
        let r = factor_correlation(&d.causal_factors, &d.spurious_factors, &shifted);
        assert!(r.abs() < 0.1, "shifted correlation {r}");
        let rest: Vec<usize> = (0..1000).filter(|&i| !d.shifted[i]).collect();
        let r = factor_correlation(&d.causal_factors, &d.spurious_factors, &rest);
        assert!((r - 0.9).abs() < 0.05, "train-regime correlation {r}");
    }

    #[test]
    fn correlated_regime_is_matchable() {
        let spec = SyntheticSpec {
            rho_test: 0.95,
            rho_train: 0.95,
            ..small(2)
        };
        let d = gen_synthetic::<f64>(&spec).unwrap();
        let items: Vec<usize> = (0..200).collect();
        let cfg = ClassifierConfig {
            proj_dim: 16,
            hidden: 16,
            epochs: 300,
            ..ClassifierConfig::default()
        };
        let clf = train_match_classifier(&d.features, &items, cfg, 0).unwrap();
        let mut rng = substream(9, "check");
        let acc = clf.pair_accuracy(&d.features, &items, &mut rng);
        assert!(acc > 0.6, "accuracy {acc}");
    }

    #[test]
    fn splits_and_views() {
        let d = gen_synthetic::<f64>(&small(5)).unwrap();
        // 10 per user -> 8/1/1.
        assert_eq!(d.dataset.count(SplitTag::Train), 60 * 8);
        assert_eq!(d.dataset.count(SplitTag::Test), 60);
        let ood = d.ood_view();
        let iid = d.iid_view();
        assert_eq!(ood.count(SplitTag::Test) + iid.count(SplitTag::Test), 60);
        assert!(ood.tagged(SplitTag::Test).all(|it| d.shifted[it.item]));
    }

    #[test]
    fn cold_shifted_items_only_in_test() {
        let spec = SyntheticSpec {
            cold_shifted: true,
            ..small(6)
        };
        let d = gen_synthetic::<f64>(&spec).unwrap();
        for (it, t) in d.dataset.interactions.iter().zip(&d.dataset.tags) {
            if d.shifted[it.item] {
                assert_eq!(*t, SplitTag::Test);
            }
        }
    }

    #[test]
    fn empty_users_rejected() {
        let spec = SyntheticSpec {
            num_users: 0,
            ..small(0)
        };
        assert!(matches!(
            gen_synthetic::<f64>(&spec),
            Err(ShiftError::Data(DataError::Empty))
        ));
    }

    #[test]
    fn writes_loadable_files() {
        let spec = small(7);
        let d = gen_synthetic::<f64>(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write(&spec, dir.path()).unwrap();
        let ds = crate::dataset::load_interactions(&dir.path().join("interactions.tsv"), Default::default()).unwrap();
        assert_eq!(ds.len(), d.dataset.len());
        let ids: Vec<String> = std::fs::read_to_string(dir.path().join("items.tsv"))
            .unwrap()
            .lines()
            .map(str::to_owned)
            .collect();
        let m: Modality<f64> =
            crate::features::load_modality("causal", &dir.path().join("causal.bin"), &ds.items, Some(&ids)).unwrap();
        let i = ds.items.get("i17").unwrap();
        for (x, y) in m.values.row(i).iter().zip(d.features.row(0, 17)) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
}
