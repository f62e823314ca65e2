//! Alternating optimisation of backbone parameters and sample weights.
//!
//! Each epoch: one weighted-BPR pass over the training triples with the
//! weights frozen, then the task mask from that pass's transform gradients,
//! then `inner_weight_steps` Adam steps on the weight logits against the
//! masked HSIC objective with the backbone frozen, then validation.

use std::io::Write;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::backbone::{backbone_grads, BackboneError, BackboneParams, ModelKind, SharedFeatures};
use crate::config::{ConfigError, TrainConfig};
use crate::dataset::{DataError, Interaction, InteractionDataset, NegativeSampler, SplitTag, TrainTriple};
use crate::eval::{evaluate_topk, EvalError, MetricsReport};
use crate::features::FeatureStore;
use crate::hsic::{HsicError, HsicObjective};
use crate::mask::{ImportanceAccumulator, MaskError, TaskMask};
use crate::optim::Adam;
use crate::rng::{stream, substream, Rng};
use crate::scalar::{all_finite, Scalar};
use crate::weights::SampleWeights;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Hsic(#[from] HsicError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite value at epoch {epoch}, batch {batch}: {what}")]
    NonFinite { epoch: usize, batch: usize, what: String },
    #[error("training split is empty")]
    NoTraining,
    #[error("validation split is empty")]
    NoValidation,
}

impl TrainError {
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::NonFinite { .. } | TrainError::Hsic(HsicError::Negative(_) | HsicError::NonFinite)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub weighted_bpr_loss: f64,
    pub hsic_loss: f64,
    pub valid: MetricsReport,
    pub wall_ms: u128,
}

impl EpochReport {
    pub const TSV_HEADER: &'static str = "epoch\tweighted_bpr_loss\thsic_loss\trecall\tndcg\tprecision";

    /// Wall time is left out so logs are reproducible byte for byte.
    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{:.12e}\t{:.12e}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch,
            self.weighted_bpr_loss,
            self.hsic_loss,
            self.valid.recall,
            self.valid.ndcg,
            self.valid.precision
        )
    }
}

pub fn write_train_log<W: Write>(reports: &[EpochReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", EpochReport::TSV_HEADER)?;
    for r in reports {
        writeln!(out, "{}", r.tsv_row())?;
    }
    Ok(())
}

/// Output of one backbone pass.
#[derive(Debug, Clone)]
pub struct ThetaEpoch<T> {
    /// Mean per-triple loss (weighted BPR plus regulariser).
    pub loss: T,
    pub importance: ImportanceAccumulator<T>,
    pub batches: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub params: BackboneParams<T>,
    pub weights: SampleWeights<T>,
    pub best_epoch: usize,
    pub reports: Vec<EpochReport>,
    /// Mask computed in each epoch (empty for models without modalities).
    pub masks: Vec<TaskMask<T>>,
}

/// Owns the mutable training state of one run.
pub struct Trainer<'a, T: Scalar> {
    ds: &'a InteractionDataset,
    store: &'a FeatureStore<T>,
    config: TrainConfig,
    sampler: NegativeSampler,
    train_pairs: Vec<Interaction>,
    hsic_subset: Vec<usize>,
    pub params: BackboneParams<T>,
    pub weights: SampleWeights<T>,
    theta_opt: Adam<T>,
    weight_opt: Adam<T>,
    rng: Rng,
    epoch: usize,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(
        ds: &'a InteractionDataset,
        store: &'a FeatureStore<T>,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let train_pairs: Vec<Interaction> = ds.tagged(SplitTag::Train).collect();
        if train_pairs.is_empty() {
            return Err(TrainError::NoTraining);
        }
        let dims = store.dims();
        let mut init_rng = substream(config.seed, stream::INIT);
        let params = BackboneParams::init(
            config.model,
            ds.num_users(),
            ds.num_items(),
            &dims,
            config.embed_dim,
            config.shared_dim,
            &mut init_rng,
        );
        params.check_store(store)?;
        let theta_opt = Adam::new(T::lit(config.lr_theta), &params.tensor_sizes());
        let weight_opt = Adam::new(T::lit(config.lambda * config.weight_lr), &[ds.num_items()]);
        Ok(Self {
            ds,
            store,
            sampler: NegativeSampler::new(ds, config.neg_exclude),
            hsic_subset: ds.train_items(),
            train_pairs,
            params,
            weights: SampleWeights::new(ds.num_items(), T::lit(config.w_max)),
            theta_opt,
            weight_opt,
            rng: substream(config.seed, stream::SAMPLING),
            config,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn shared(&self) -> Result<SharedFeatures<T>, TrainError> {
        Ok(SharedFeatures::compute(&self.params, self.store)?)
    }

    fn sample_triples(&mut self) -> Result<Vec<TrainTriple>, TrainError> {
        let mut order: Vec<usize> = (0..self.train_pairs.len()).collect();
        order.shuffle(&mut self.rng);
        order
            .into_iter()
            .map(|k| {
                let it = self.train_pairs[k];
                Ok(TrainTriple {
                    user: it.user,
                    pos_item: it.item,
                    neg_item: self.sampler.sample(it.user, &mut self.rng)?,
                })
            })
            .collect()
    }

    /// One shuffled pass with one fresh negative per positive, weights frozen.
    pub fn train_theta_epoch(&mut self) -> Result<ThetaEpoch<T>, TrainError> {
        self.epoch += 1;
        let epoch = self.epoch;
        let triples = self.sample_triples()?;
        let weights = self.weights.values();
        let l2 = T::lit(self.config.l2_reg);
        let mut importance = ImportanceAccumulator::new(self.params.shared_dim(), self.params.num_modalities());
        let mut total = T::zero();
        let mut batches = 0;
        for (b, batch) in triples.chunks(self.config.batch_size).enumerate() {
            let shared = SharedFeatures::compute(&self.params, self.store)?;
            let g = backbone_grads(&self.params, &shared, self.store, batch, &weights, l2);
            if !g.loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    what: "loss".into(),
                });
            }
            let names = g.grads.tensor_names();
            if let Some(k) = g.grads.tensors().iter().position(|t| !all_finite(t)) {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    what: format!("gradient of {}", names[k]),
                });
            }
            importance.observe(&g.grads.transforms)?;
            self.theta_opt.begin_step();
            for (slot, (p, gr)) in self.params.tensors_mut().into_iter().zip(g.grads.tensors()).enumerate() {
                self.theta_opt.apply(slot, p, gr);
            }
            total += g.loss * T::from_count(batch.len());
            batches += 1;
        }
        Ok(ThetaEpoch {
            loss: total / T::from_count(triples.len()),
            importance,
            batches,
        })
    }

    /// Whether the weight phase has anything to do.
    pub fn reweights(&self) -> bool {
        self.params.kind == ModelKind::Vbpr && self.params.num_modalities() >= 2
    }

    /// Mask from the epoch's accumulated transform gradients.
    pub fn task_mask(&self, theta: &ThetaEpoch<T>) -> Result<TaskMask<T>, TrainError> {
        Ok(theta.importance.mask(T::lit(self.config.mask_temperature))?)
    }

    /// `inner_weight_steps` Adam steps on the logits of items with training
    /// interactions. Returns the HSIC value before the first step.
    pub fn update_weights(&mut self, mask: &TaskMask<T>) -> Result<T, TrainError> {
        if !self.reweights() || self.hsic_subset.is_empty() {
            return Ok(T::zero());
        }
        let shared = self.shared()?;
        let objective = HsicObjective::new(&shared, mask, &self.hsic_subset, self.config.hsic_mode)?;
        if self.config.lambda == 0.0 {
            return Ok(objective.loss(&self.weights)?);
        }
        let gamma = T::lit(self.config.weight_penalty);
        let mut first = None;
        for step in 0..self.config.inner_weight_steps.max(1) {
            let (_, grad) = objective.objective_and_logit_grad(&self.weights, gamma)?;
            if first.is_none() {
                first = Some(objective.loss(&self.weights)?);
            }
            if !all_finite(&grad) {
                return Err(TrainError::NonFinite {
                    epoch: self.epoch,
                    batch: step,
                    what: "sample-weight gradient".into(),
                });
            }
            self.weight_opt.begin_step();
            self.weight_opt
                .apply_sparse(0, &mut self.weights.logits, &grad, &self.hsic_subset);
        }
        Ok(first.unwrap_or_else(T::zero))
    }

    pub fn validate(&self) -> Result<MetricsReport, TrainError> {
        let shared = self.shared()?;
        let mut r = evaluate_topk(
            &self.params,
            &shared,
            self.ds,
            SplitTag::Valid,
            &[self.config.eval_k],
            self.config.eval_exclude,
            false,
        )?;
        Ok(r.remove(0))
    }

    /// Full alternation with early stopping on validation recall.
    pub fn fit(self) -> Result<FitResult<T>, TrainError> {
        self.fit_with(|t| t.validate())
    }

    /// [`Self::fit`] with a custom validation step.
    pub fn fit_with<F>(mut self, mut validate: F) -> Result<FitResult<T>, TrainError>
    where
        F: FnMut(&Self) -> Result<MetricsReport, TrainError>,
    {
        let mut reports = Vec::new();
        let mut masks = Vec::new();
        let mut best: Option<(f64, usize, BackboneParams<T>, SampleWeights<T>)> = None;
        let mut since_best = 0usize;
        for _ in 0..self.config.epochs_max {
            let started = Instant::now();
            let theta = self.train_theta_epoch()?;
            let hsic = if self.reweights() && theta.batches > 0 {
                let mask = self.task_mask(&theta)?;
                let h = self.update_weights(&mask)?;
                masks.push(mask);
                h
            } else {
                T::zero()
            };
            let valid = validate(&self)?;
            let report = EpochReport {
                epoch: self.epoch,
                weighted_bpr_loss: theta.loss.to_f64_lossy(),
                hsic_loss: hsic.to_f64_lossy(),
                valid,
                wall_ms: started.elapsed().as_millis(),
            };
            debug!(
                "epoch {} loss {:.6} hsic {:.6} R@{} {:.4}",
                report.epoch, report.weighted_bpr_loss, report.hsic_loss, report.valid.k, report.valid.recall
            );
            let improved = best.as_ref().is_none_or(|b| report.valid.recall > b.0);
            if improved {
                best = Some((
                    report.valid.recall,
                    self.epoch,
                    self.params.clone(),
                    self.weights.clone(),
                ));
                since_best = 0;
            } else {
                since_best += 1;
            }
            reports.push(report);
            if since_best >= self.config.patience {
                info!(
                    "early stop at epoch {} (best {})",
                    self.epoch,
                    best.as_ref().map_or(0, |b| b.1)
                );
                break;
            }
        }
        let (_, best_epoch, params, weights) = best.ok_or(TrainError::NoValidation)?;
        Ok(FitResult {
            params,
            weights,
            best_epoch,
            reports,
            masks,
        })
    }
}

/// Trains on `ds` (tags: train / valid) and returns the best-validation state.
pub fn fit<T: Scalar>(
    ds: &InteractionDataset,
    store: &FeatureStore<T>,
    config: &TrainConfig,
) -> Result<FitResult<T>, TrainError> {
    if ds.count(SplitTag::Valid) == 0 {
        return Err(TrainError::NoValidation);
    }
    Trainer::new(ds, store, config.clone())?.fit()
}

/// `item_id\tweight` rows for items with training interactions.
pub fn write_weights<T: Scalar, W: Write>(
    weights: &SampleWeights<T>,
    ds: &InteractionDataset,
    mut out: W,
) -> std::io::Result<()> {
    for i in ds.train_items() {
        writeln!(out, "{}\t{:.9}", ds.items.id(i), weights.weight(i).to_f64_lossy())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::IdMap;
    use crate::features::Modality;
    use ndarray::Array2;
    use rand::{Rng as _, SeedableRng};

    /// 3 users, 6 items; user u likes items 2u and 2u+1. Each user has one
    /// validation positive so early stopping has something to read.
    fn toy(num_modalities: usize, dim: usize) -> (InteractionDataset, FeatureStore<f64>) {
        let users = IdMap::from_ids((0..3).map(|u| format!("u{u}")));
        let items = IdMap::from_ids((0..6).map(|i| format!("i{i}")));
        let mut inter = Vec::new();
        let mut tags = Vec::new();
        for u in 0..3 {
            for (k, &i) in [2 * u, 2 * u + 1, (2 * u + 2) % 6].iter().enumerate() {
                inter.push(Interaction { user: u, item: i });
                tags.push(if k == 2 { SplitTag::Valid } else { SplitTag::Train });
            }
        }
        let ds = InteractionDataset::new(users, items, inter, tags).unwrap();
        let mut rng = Rng::seed_from_u64(5);
        let mods = (0..num_modalities)
            .map(|m| Modality {
                name: format!("m{m}"),
                values: Array2::from_shape_fn((6, dim), |_| rng.random_range(-1.0..1.0)),
            })
            .collect();
        let store = FeatureStore::new(6, mods).unwrap();
        (ds, store)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            embed_dim: 2,
            shared_dim: 3,
            batch_size: 2,
            lr_theta: 0.05,
            l2_reg: 0.0,
            epochs_max: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_step_leaves_params_bitwise() {
        let (ds, store) = toy(2, 4);
        let cfg = TrainConfig {
            lr_theta: 0.0,
            ..small_config()
        };
        let mut t = Trainer::new(&ds, &store, cfg).unwrap();
        let before = t.params.clone();
        t.train_theta_epoch().unwrap();
        t.train_theta_epoch().unwrap();
        assert_eq!(t.params, before);
    }

    #[test]
    fn toy_loss_decreases() {
        let (ds, store) = toy(0, 1);
        let cfg = TrainConfig {
            model: ModelKind::Mf,
            ..small_config()
        };
        let mut t = Trainer::new(&ds, &store, cfg).unwrap();
        let losses: Vec<f64> = (0..5).map(|_| t.train_theta_epoch().unwrap().loss).collect();
        assert!(losses[4] < losses[0], "{losses:?}");
    }

    #[test]
    fn zero_lambda_keeps_unit_weights() {
        let (ds, store) = toy(2, 4);
        let cfg = TrainConfig {
            lambda: 0.0,
            ..small_config()
        };
        let fit = Trainer::new(&ds, &store, cfg).unwrap().fit().unwrap();
        assert!(fit.weights.values().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn one_epoch_runs_each_phase_once() {
        let (ds, store) = toy(2, 4);
        let cfg = TrainConfig {
            epochs_max: 1,
            ..small_config()
        };
        let fit = Trainer::new(&ds, &store, cfg).unwrap().fit().unwrap();
        assert_eq!(fit.reports.len(), 1);
        assert_eq!(fit.masks.len(), 1);
        assert_eq!(fit.best_epoch, 1);
    }

    #[test]
    fn degrading_validation_stops_after_patience() {
        let (ds, store) = toy(0, 1);
        let cfg = TrainConfig {
            model: ModelKind::Mf,
            epochs_max: 50,
            ..small_config()
        };
        let t = Trainer::new(&ds, &store, cfg).unwrap();
        let fit = t
            .fit_with(|t| {
                Ok(MetricsReport {
                    k: 20,
                    recall: 1.0 / t.epoch() as f64,
                    ndcg: 0.0,
                    precision: 0.0,
                    num_users: 1,
                    per_user: None,
                })
            })
            .unwrap();
        assert_eq!(fit.reports.len(), 11);
        assert_eq!(fit.best_epoch, 1);
    }

    #[test]
    fn large_penalty_pins_weights() {
        // Adam moves a logit by about one step per update whatever the
        // gradient scale, so "pinned" means within one step of the anchor.
        let (ds, store) = toy(2, 4);
        let cfg = TrainConfig {
            lambda: 0.01,
            weight_lr: 0.1,
            weight_penalty: 1e9,
            inner_weight_steps: 5,
            ..small_config()
        };
        let step = cfg.lambda * cfg.weight_lr;
        let fit = Trainer::new(&ds, &store, cfg).unwrap().fit().unwrap();
        for w in fit.weights.values() {
            assert!((w - 1.0).abs() <= step, "{w}");
        }
    }

    #[test]
    fn correlated_item_gets_lower_weight() {
        let (ds, _) = toy(2, 6);
        // Item 0: identical ramps in both modalities; item 1: a scrambled pairing.
        let ramp = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let scrambled = [3.0, 0.0, 5.0, 1.0, 4.0, 2.0];
        let mut a = Array2::zeros((6, 6));
        let mut b = Array2::zeros((6, 6));
        for j in 0..6 {
            a[[0, j]] = ramp[j];
            b[[0, j]] = ramp[j];
            a[[1, j]] = ramp[j];
            b[[1, j]] = scrambled[j];
        }
        let store = FeatureStore::new(
            6,
            vec![
                Modality {
                    name: "v".into(),
                    values: a,
                },
                Modality {
                    name: "t".into(),
                    values: b,
                },
            ],
        )
        .unwrap();
        let cfg = TrainConfig {
            shared_dim: 6,
            lambda: 0.5,
            inner_weight_steps: 50,
            ..small_config()
        };
        let mut t = Trainer::new(&ds, &store, cfg).unwrap();
        for m in 0..2 {
            t.params.transforms[m] = Array2::eye(6);
        }
        let mask = TaskMask::uniform(2, 6);
        t.update_weights(&mask).unwrap();
        let (wa, wb) = (t.weights.weight(0), t.weights.weight(1));
        assert!(wa < wb, "w_A = {wa}, w_B = {wb}");
    }

    #[test]
    fn same_seed_same_reports() {
        let (ds, store) = toy(2, 4);
        let run = || Trainer::new(&ds, &store, small_config()).unwrap().fit().unwrap();
        let (a, b) = (run(), run());
        let rows = |f: &FitResult<f64>| f.reports.iter().map(EpochReport::tsv_row).collect::<Vec<_>>();
        assert_eq!(rows(&a), rows(&b));
        assert_eq!(a.params, b.params);
        assert_eq!(a.weights, b.weights);
    }
}
