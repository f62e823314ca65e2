//! Helpers shared by the integration tests: finite-difference checks, naive
//! reference implementations and the synthetic shift experiment.
#![allow(dead_code)]

use modest::backbone::{backbone_grads, score, weighted_bpr_loss};
use modest::dataset::{IdMap, Interaction};
use modest::features::Modality;
use modest::hsic::masked_weighted_hsic_loss;
use modest::rng::Rng;
use modest::shift::{ClassifierConfig, MatchClassifier};
use modest::{
    BackboneParams, FeatureStore, HsicMode, InteractionDataset, ModelKind, SampleWeights, SharedFeatures, SplitTag,
    TaskMask, TrainConfig, TrainTriple,
};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn store(mats: Vec<Array2<f64>>) -> FeatureStore<f64> {
    let n = mats[0].nrows();
    let mods = mats
        .into_iter()
        .enumerate()
        .map(|(k, values)| Modality {
            name: format!("m{k}"),
            values,
        })
        .collect();
    FeatureStore::new(n, mods).unwrap()
}

/// `||a - f|| / max(||a||, ||f||)` over the whole flattened gradient.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` in every coordinate of a tensor list.
fn central_differences<P: Clone>(
    base: &P,
    sizes: &[usize],
    poke: impl Fn(&mut P, usize, usize, f64),
    f: impl Fn(&P) -> f64,
) -> Vec<f64> {
    let mut out = Vec::new();
    for (t, &n) in sizes.iter().enumerate() {
        for k in 0..n {
            let at = |delta: f64| {
                let mut p = base.clone();
                poke(&mut p, t, k, delta);
                f(&p)
            };
            out.push((at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP));
        }
    }
    out
}

/// Backbone gradient against finite differences on a random VBPR instance.
pub fn backbone_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (nu, ni) = (4, 6);
    let feats = store(vec![gaussian(ni, 3, 1.0, &mut r), gaussian(ni, 2, 1.0, &mut r)]);
    let mut params = BackboneParams::<f64>::init(ModelKind::Vbpr, nu, ni, &feats.dims(), 3, 2, &mut r);
    for t in params.tensors_mut() {
        for x in t {
            *x = 0.5 * r.sample::<f64, _>(StandardNormal);
        }
    }
    let triples: Vec<TrainTriple> = (0..8)
        .map(|_| {
            let user = r.random_range(0..nu);
            let pos_item = r.random_range(0..ni);
            let neg_item = (pos_item + r.random_range(1..ni)) % ni;
            TrainTriple {
                user,
                pos_item,
                neg_item,
            }
        })
        .collect();
    let weights: Vec<f64> = (0..ni).map(|_| r.random_range(0.5..1.5)).collect();
    let l2 = 0.05;
    let shared = SharedFeatures::compute(&params, &feats).unwrap();
    let g = backbone_grads(&params, &shared, &feats, &triples, &weights, l2);
    let analytic: Vec<f64> = g.grads.tensors().concat();
    let numeric = central_differences(
        &params,
        &params.tensor_sizes(),
        |p, t, k, d| p.tensors_mut()[t][k] += d,
        |p| weighted_bpr_loss(p, &SharedFeatures::compute(p, &feats).unwrap(), &triples, &weights, l2),
    );
    rel_err(&analytic, &numeric)
}

/// Random positive mask whose rows each sum to their length.
pub fn random_mask(modalities: usize, dim: usize, r: &mut Rng) -> TaskMask<f64> {
    let per_modality = (0..modalities)
        .map(|_| {
            let raw: Vec<f64> = (0..dim).map(|_| r.random_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| x * dim as f64 / s).collect()
        })
        .collect();
    TaskMask { per_modality }
}

/// Gradient of HSIC plus anchor penalty in the weight logits.
pub fn hsic_gradient_error(seed: u64, mode: HsicMode) -> f64 {
    let mut r = rng(seed);
    let n = 7;
    let modalities = 2 + (seed % 2) as usize;
    let dim = 2 + (seed % 3) as usize;
    let shared = SharedFeatures {
        per_modality: (0..modalities).map(|_| gaussian(n, dim, 1.0, &mut r)).collect(),
    };
    let mask = random_mask(modalities, dim, &mut r);
    let mut subset: Vec<usize> = (0..n).collect();
    subset.shuffle(&mut r);
    subset.truncate(5);
    subset.sort_unstable();
    let mut weights = SampleWeights::new(n, 2.0);
    for l in &mut weights.logits {
        *l = r.random_range(-1.5..1.5);
    }
    let gamma = 0.1;
    let analytic = modest::hsic::hsic_grad_weight_logits(&shared, &mask, &weights, &subset, mode, gamma).unwrap();
    let numeric = central_differences(
        &weights,
        &[n],
        |w, _, k, d| w.logits[k] += d,
        |w| {
            let penalty: f64 = subset.iter().map(|&i| (w.weight(i) - 1.0).powi(2)).sum::<f64>() / subset.len() as f64;
            masked_weighted_hsic_loss(&shared, &mask, w, &subset, mode).unwrap() + gamma * penalty
        },
    );
    rel_err(&analytic, &numeric)
}

/// Match classifier backprop against finite differences.
pub fn classifier_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = 10;
    let feats = store(vec![gaussian(n, 4, 1.0, &mut r), gaussian(n, 3, 1.0, &mut r)]);
    let items: Vec<usize> = (0..n).collect();
    let cfg = ClassifierConfig {
        proj_dim: 3,
        hidden: 4,
        ..ClassifierConfig::default()
    };
    let mut clf = MatchClassifier::init(&feats, &items, cfg, &mut r).unwrap();
    for t in clf.params.tensors_mut() {
        for x in t {
            *x = r.random_range(-1.0..1.0);
        }
    }
    let pairs: Vec<(usize, usize)> = (0..12).map(|_| (r.random_range(0..n), r.random_range(0..n))).collect();
    let labels: Vec<f64> = pairs.iter().map(|&(a, b)| f64::from(u8::from(a == b))).collect();
    let x = clf.pair_inputs(&feats, &pairs);
    let (_, grad) = clf.loss_and_grad(&x, &labels);
    let analytic: Vec<f64> = grad.tensors().concat();
    let sizes: Vec<usize> = clf.params.tensors().iter().map(|t| t.len()).collect();
    let numeric = central_differences(
        &clf,
        &sizes,
        |c, t, k, d| c.params.tensors_mut()[t][k] += d,
        |c| c.loss_and_grad(&x, &labels).0,
    );
    rel_err(&analytic, &numeric)
}

/// Quadruple-loop `tr(K H L H) / (n - 1)^2` with `K_ij = exp(-(u_i - u_j)^2 / sigma^2)`
/// and `H = I - 1/n`.
pub fn naive_hsic(u: &[f64], v: &[f64], sigma_u: f64, sigma_v: f64) -> f64 {
    let n = u.len();
    let k = |a: f64, b: f64, s: f64| (-(a - b).powi(2) / (s * s)).exp();
    let h = |i: usize, j: usize| f64::from(u8::from(i == j)) - 1.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            for p in 0..n {
                for q in 0..n {
                    total += k(u[i], u[j], sigma_u) * h(j, p) * k(v[p], v[q], sigma_v) * h(q, i);
                }
            }
        }
    }
    total / ((n - 1) * (n - 1)) as f64
}

/// Recall/NDCG/Precision@k by scoring every item, fully sorting, and
/// breaking ties by the lower item index.
pub fn brute_force_metrics(
    params: &BackboneParams<f64>,
    shared: &SharedFeatures<f64>,
    ds: &InteractionDataset,
    split: SplitTag,
    k: usize,
    exclude: &[SplitTag],
) -> (f64, f64, f64) {
    let mut sums = (0.0, 0.0, 0.0);
    let mut users = 0;
    for u in 0..ds.num_users() {
        let of = |tags: &[SplitTag]| -> Vec<usize> {
            ds.interactions
                .iter()
                .zip(&ds.tags)
                .filter(|(it, t)| it.user == u && tags.contains(t))
                .map(|(it, _)| it.item)
                .collect()
        };
        let relevant = of(&[split]);
        if relevant.is_empty() {
            continue;
        }
        let excluded = of(exclude);
        let mut ranked: Vec<(f64, usize)> = (0..ds.num_items())
            .filter(|i| !excluded.contains(i))
            .map(|i| (score(params, shared, u, i), i))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.truncate(k);
        let mut rel = relevant.clone();
        rel.sort_unstable();
        rel.dedup();
        let mut hits = 0usize;
        let mut dcg = 0.0;
        for (rank, &(_, i)) in ranked.iter().enumerate() {
            if rel.contains(&i) {
                hits += 1;
                dcg += 1.0 / ((rank + 2) as f64).log2();
            }
        }
        let idcg: f64 = (0..k.min(rel.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
        sums.0 += hits as f64 / rel.len() as f64;
        sums.1 += dcg / idcg;
        sums.2 += hits as f64 / k as f64;
        users += 1;
    }
    let n = users as f64;
    (sums.0 / n, sums.1 / n, sums.2 / n)
}

/// Random tagged dataset; users with at least three interactions get one
/// of each of train, valid and test.
pub fn random_dataset(users: usize, items: usize, per_user: usize, r: &mut Rng) -> InteractionDataset {
    let tags = [SplitTag::Train, SplitTag::Valid, SplitTag::Test];
    let mut inter = Vec::new();
    let mut tagv = Vec::new();
    for u in 0..users {
        let mut pool: Vec<usize> = (0..items).collect();
        pool.shuffle(r);
        for (k, &i) in pool.iter().take(per_user.min(items)).enumerate() {
            inter.push(Interaction { user: u, item: i });
            tagv.push(if k < tags.len() {
                tags[k]
            } else {
                tags[r.random_range(0..tags.len())]
            });
        }
    }
    InteractionDataset::new(
        IdMap::from_ids((0..users).map(|u| format!("u{u}"))),
        IdMap::from_ids((0..items).map(|i| format!("i{i}"))),
        inter,
        tagv,
    )
    .unwrap()
}

/// Hyperparameters the shift experiment trains with.
pub fn experiment_config(seed: u64, lambda: f64) -> TrainConfig {
    TrainConfig {
        lambda,
        seed,
        embed_dim: 16,
        shared_dim: 16,
        lr_theta: 3e-3,
        epochs_max: 60,
        patience: 10,
        weight_penalty: 0.01,
        inner_weight_steps: 5,
        weight_lr: 0.1,
        hsic_mode: HsicMode::Population,
        ..TrainConfig::default()
    }
}

pub fn experiment_spec(seed: u64) -> modest::shift::SyntheticSpec {
    modest::shift::SyntheticSpec {
        num_users: 2000,
        num_items: 1000,
        dims: vec![32, 32],
        interactions_per_user: 20,
        seed,
        ..Default::default()
    }
}
