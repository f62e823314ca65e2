//! Binary classifier estimating whether two modality vectors belong to the
//! same item.
//!
//! Each modality is randomly projected to `proj_dim` and standardised; the
//! concatenated pair goes through `tanh` hidden units and a sigmoid output.
//! Training is full-batch Adam on the logistic loss with one freshly drawn
//! mismatched pair per true pair each epoch.

use log::warn;
use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::ShiftError;
use crate::features::FeatureStore;
use crate::optim::Adam;
use crate::rng::{stream, substream, Rng};
use crate::scalar::{sigmoid, softplus, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub proj_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    /// The two modalities compared.
    pub pair: (usize, usize),
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            proj_dim: 128,
            hidden: 64,
            epochs: 200,
            lr: 0.01,
            pair: (0, 1),
        }
    }
}

/// Trainable part of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    /// `hidden x 2*proj_dim`
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array1<T>,
    /// Output bias, stored as a length-1 array.
    pub b2: Array1<T>,
}

impl<T: Scalar> MlpParams<T> {
    pub fn tensors(&self) -> Vec<&[T]> {
        vec![
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    fn sizes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }
}

/// Fixed input map for one modality: projection then standardisation.
#[derive(Debug, Clone, PartialEq)]
struct Projection<T> {
    /// `d_m x proj_dim`
    matrix: Array2<T>,
    mean: Array1<T>,
    scale: Array1<T>,
}

impl<T: Scalar> Projection<T> {
    fn apply(&self, x: &Array2<T>) -> Array2<T> {
        (x.dot(&self.matrix) - &self.mean) / &self.scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchClassifier<T> {
    pub config: ClassifierConfig,
    projections: [Projection<T>; 2],
    pub params: MlpParams<T>,
    /// Full-batch training loss after each epoch.
    pub loss_trace: Vec<T>,
}

impl<T: Scalar> MatchClassifier<T> {
    /// Untrained classifier. Projections are standardised over `subset`.
    /// The output layer starts at zero, so every pair scores exactly 0.5.
    pub fn init(
        store: &FeatureStore<T>,
        subset: &[usize],
        config: ClassifierConfig,
        rng: &mut Rng,
    ) -> Result<Self, ShiftError> {
        let (a, b) = config.pair;
        if store.num_modalities() < 2 || a == b || a.max(b) >= store.num_modalities() {
            return Err(ShiftError::Modalities(store.num_modalities()));
        }
        if subset.len() < 10 {
            return Err(ShiftError::TooFewItems(subset.len()));
        }
        let dp = config.proj_dim;
        let mut project = |m: usize| {
            let dm = store.modality(m).dim();
            let s = T::one() / T::from_count(dm).sqrt();
            let matrix = Array2::from_shape_fn((dm, dp), |_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z) * s
            });
            let rows = store.modality(m).values.select(Axis(0), subset);
            let z = rows.dot(&matrix);
            let mean = z.mean_axis(Axis(0)).expect("subset nonempty");
            let scale = z
                .var_axis(Axis(0), T::zero())
                .mapv(|v| if v > T::zero() { v.sqrt() } else { T::one() });
            Projection { matrix, mean, scale }
        };
        let projections = [project(a), project(b)];
        let fan = T::from_count(config.hidden + 2 * dp);
        let bound = (T::lit(6.0) / fan).sqrt();
        let w1 = Array2::from_shape_fn((config.hidden, 2 * dp), |_| T::lit(rng.random_range(-1.0..1.0)) * bound);
        let params = MlpParams {
            w1,
            b1: Array1::zeros(config.hidden),
            w2: Array1::zeros(config.hidden),
            b2: Array1::zeros(1),
        };
        Ok(Self {
            config,
            projections,
            params,
            loss_trace: Vec::new(),
        })
    }

    /// Standardised inputs for (first-modality item, second-modality item) pairs.
    pub fn pair_inputs(&self, store: &FeatureStore<T>, pairs: &[(usize, usize)]) -> Array2<T> {
        let (a, b) = self.config.pair;
        let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let za = self.projections[0].apply(&store.modality(a).values.select(Axis(0), &left));
        let zb = self.projections[1].apply(&store.modality(b).values.select(Axis(0), &right));
        ndarray::concatenate(Axis(1), &[za.view(), zb.view()]).expect("same row count")
    }

    /// Raw inputs (unprojected vectors of the two modalities).
    pub fn raw_inputs(&self, a: &[T], b: &[T]) -> Result<Array2<T>, ShiftError> {
        if !a.iter().chain(b).all(|x| x.is_finite()) {
            return Err(ShiftError::NonFinite);
        }
        let pa = &self.projections[0];
        let pb = &self.projections[1];
        if a.len() != pa.matrix.nrows() || b.len() != pb.matrix.nrows() {
            return Err(ShiftError::Dimension);
        }
        let ra = Array2::from_shape_vec((1, a.len()), a.to_vec()).expect("shape");
        let rb = Array2::from_shape_vec((1, b.len()), b.to_vec()).expect("shape");
        let (za, zb) = (pa.apply(&ra), pb.apply(&rb));
        Ok(ndarray::concatenate(Axis(1), &[za.view(), zb.view()]).expect("same row count"))
    }

    fn hidden(&self, x: &Array2<T>) -> Array2<T> {
        (x.dot(&self.params.w1.t()) + &self.params.b1).mapv(|v| v.tanh())
    }

    /// Pre-sigmoid outputs.
    pub fn logits(&self, x: &Array2<T>) -> Array1<T> {
        self.hidden(x).dot(&self.params.w2) + self.params.b2[0]
    }

    pub fn predict(&self, x: &Array2<T>) -> Array1<T> {
        self.logits(x).mapv(sigmoid)
    }

    /// Mean logistic loss over rows of `x` and its gradient.
    pub fn loss_and_grad(&self, x: &Array2<T>, labels: &[T]) -> (T, MlpParams<T>) {
        let n = T::from_count(x.nrows());
        let h = self.hidden(x);
        let s = h.dot(&self.params.w2) + self.params.b2[0];
        let mut loss = T::zero();
        let mut g = Array1::zeros(s.len());
        for (k, (&sk, &y)) in s.iter().zip(labels).enumerate() {
            loss += y * softplus(-sk) + (T::one() - y) * softplus(sk);
            g[k] = (sigmoid(sk) - y) / n;
        }
        let w2 = h.t().dot(&g);
        let b2 = Array1::from_elem(1, g.sum());
        // dL/dpre = g * w2 * (1 - h^2)
        let mut dpre = h.mapv(|v| T::one() - v * v);
        for (mut row, &gk) in dpre.rows_mut().into_iter().zip(&g) {
            row.zip_mut_with(&self.params.w2, |d, &w| *d = *d * w * gk);
        }
        let w1 = dpre.t().dot(x);
        let b1 = dpre.sum_axis(Axis(0));
        (loss / n, MlpParams { w1, b1, w2, b2 })
    }

    /// Match probability of the item's own pair.
    pub fn estimate_match_prob(&self, store: &FeatureStore<T>, item: usize) -> Result<T, ShiftError> {
        let (a, b) = self.config.pair;
        let ra = store.row(a, item).to_vec();
        let rb = store.row(b, item).to_vec();
        self.prob_pair(&ra, &rb)
    }

    pub fn prob_pair(&self, a: &[T], b: &[T]) -> Result<T, ShiftError> {
        let x = self.raw_inputs(a, b)?;
        Ok(self.predict(&x)[0])
    }

    /// Probability for every item of `items`, in order.
    pub fn match_probs(&self, store: &FeatureStore<T>, items: &[usize]) -> Array1<T> {
        let pairs: Vec<(usize, usize)> = items.iter().map(|&i| (i, i)).collect();
        self.predict(&self.pair_inputs(store, &pairs))
    }

    /// Accuracy at threshold 0.5 on every true pair plus one mismatched pair each.
    pub fn pair_accuracy(&self, store: &FeatureStore<T>, subset: &[usize], rng: &mut Rng) -> f64 {
        let (pairs, labels) = sample_pairs::<T>(subset, rng);
        let p = self.predict(&self.pair_inputs(store, &pairs));
        let correct = p
            .iter()
            .zip(&labels)
            .filter(|(&p, &y)| (p > T::lit(0.5)) == (y > T::lit(0.5)))
            .count();
        correct as f64 / labels.len() as f64
    }
}

/// True pairs `(i, i)` followed by one `(i, j)`, `j != i`, per item.
fn sample_pairs<T: Scalar>(subset: &[usize], rng: &mut Rng) -> (Vec<(usize, usize)>, Vec<T>) {
    let n = subset.len();
    let mut pairs: Vec<(usize, usize)> = subset.iter().map(|&i| (i, i)).collect();
    for k in 0..n {
        let mut j = rng.random_range(0..n - 1);
        if j >= k {
            j += 1;
        }
        pairs.push((subset[k], subset[j]));
    }
    let mut labels = vec![T::one(); n];
    labels.resize(2 * n, T::zero());
    (pairs, labels)
}

/// Trains a classifier on the items of `subset`; randomness comes from the
/// `classifier` sub-stream of `seed`.
pub fn train_match_classifier<T: Scalar>(
    store: &FeatureStore<T>,
    subset: &[usize],
    config: ClassifierConfig,
    seed: u64,
) -> Result<MatchClassifier<T>, ShiftError> {
    let mut rng = substream(seed, stream::CLASSIFIER);
    let mut clf = MatchClassifier::init(store, subset, config, &mut rng)?;
    let mut opt = Adam::new(T::lit(clf.config.lr), &clf.params.sizes());
    let mut initial = None;
    for _ in 0..clf.config.epochs {
        let (pairs, labels) = sample_pairs::<T>(subset, &mut rng);
        let x = clf.pair_inputs(store, &pairs);
        let (loss, grad) = clf.loss_and_grad(&x, &labels);
        initial.get_or_insert(loss);
        opt.begin_step();
        for (slot, (p, g)) in clf.params.tensors_mut().into_iter().zip(grad.tensors()).enumerate() {
            opt.apply(slot, p, g);
        }
        clf.loss_trace.push(loss);
    }
    if let (Some(first), Some(&last)) = (initial, clf.loss_trace.last()) {
        if !(last <= first) {
            warn!("match classifier diverged: loss {first} -> {last}");
        }
    }
    Ok(clf)
}
