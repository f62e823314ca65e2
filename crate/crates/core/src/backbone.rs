//! Matrix-factorisation and VBPR-style scoring with analytic BPR gradients.
//!
//! VBPR score: `x_u . x_i + sum_m p_u^m . (W_m e_i^m + b_m)`. The MF score is
//! the first term alone.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use thiserror::Error;

use crate::dataset::TrainTriple;
use crate::features::FeatureStore;
use crate::scalar::{dot, sigmoid, softplus, Scalar};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BackboneError {
    #[error("modality {modality}: features have {found} columns, transform expects {expected}")]
    DimMismatch {
        modality: usize,
        expected: usize,
        found: usize,
    },
    #[error("feature store has {found} modalities, model expects {expected}")]
    ModalityCount { expected: usize, found: usize },
    #[error("feature store has {found} items, model expects {expected}")]
    ItemCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    Mf,
    #[default]
    Vbpr,
}

impl ModelKind {
    pub fn tag(self) -> u32 {
        match self {
            ModelKind::Mf => 0,
            ModelKind::Vbpr => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::Mf),
            1 => Some(ModelKind::Vbpr),
            _ => None,
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mf" => Ok(ModelKind::Mf),
            "vbpr" => Ok(ModelKind::Vbpr),
            other => Err(format!("unknown model `{other}` (expected mf or vbpr)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mf => "mf",
            ModelKind::Vbpr => "vbpr",
        })
    }
}

/// Trainable tensors. Also used as the gradient container (same shapes).
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams<T> {
    pub kind: ModelKind,
    /// `num_users x d`
    pub user_embed: Array2<T>,
    /// `num_items x d`
    pub item_embed: Array2<T>,
    /// Per modality `d' x d_m`.
    pub transforms: Vec<Array2<T>>,
    /// Per modality `d'`.
    pub biases: Vec<Array1<T>>,
    /// Per modality `num_users x d'`.
    pub user_pref: Vec<Array2<T>>,
}

fn xavier<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || T::lit(dist.sample(rng)))
}

impl<T: Scalar> BackboneParams<T> {
    /// Xavier-uniform init for every matrix, zero biases. MF ignores `modality_dims`.
    pub fn init<R: Rng + ?Sized>(
        kind: ModelKind,
        num_users: usize,
        num_items: usize,
        modality_dims: &[usize],
        d: usize,
        shared_dim: usize,
        rng: &mut R,
    ) -> Self {
        let user_embed = xavier(num_users, d, rng);
        let item_embed = xavier(num_items, d, rng);
        let dims: &[usize] = if kind == ModelKind::Vbpr { modality_dims } else { &[] };
        let mut transforms = Vec::new();
        let mut biases = Vec::new();
        let mut user_pref = Vec::new();
        for &dm in dims {
            transforms.push(xavier(shared_dim, dm, rng));
            biases.push(Array1::zeros(shared_dim));
            user_pref.push(xavier(num_users, shared_dim, rng));
        }
        Self {
            kind,
            user_embed,
            item_embed,
            transforms,
            biases,
            user_pref,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            kind: self.kind,
            user_embed: Array2::zeros(self.user_embed.raw_dim()),
            item_embed: Array2::zeros(self.item_embed.raw_dim()),
            transforms: self.transforms.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            user_pref: self.user_pref.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_embed.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.item_embed.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.user_embed.ncols()
    }

    pub fn num_modalities(&self) -> usize {
        self.transforms.len()
    }

    pub fn shared_dim(&self) -> usize {
        self.biases.first().map_or(0, |b| b.len())
    }

    pub fn modality_dims(&self) -> Vec<usize> {
        self.transforms.iter().map(|t| t.ncols()).collect()
    }

    /// Names in declaration order, matching [`Self::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["user_embed".to_string(), "item_embed".to_string()];
        for m in 0..self.num_modalities() {
            names.push(format!("transform[{m}]"));
            names.push(format!("bias[{m}]"));
            names.push(format!("user_pref[{m}]"));
        }
        names
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![
            self.user_embed.as_slice().expect("standard layout"),
            self.item_embed.as_slice().expect("standard layout"),
        ];
        for m in 0..self.num_modalities() {
            out.push(self.transforms[m].as_slice().expect("standard layout"));
            out.push(self.biases[m].as_slice().expect("standard layout"));
            out.push(self.user_pref[m].as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![
            self.user_embed.as_slice_mut().expect("standard layout"),
            self.item_embed.as_slice_mut().expect("standard layout"),
        ];
        for ((w, b), p) in self
            .transforms
            .iter_mut()
            .zip(self.biases.iter_mut())
            .zip(self.user_pref.iter_mut())
        {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
            out.push(p.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Checks the transforms against a feature store.
    pub fn check_store(&self, store: &FeatureStore<T>) -> Result<(), BackboneError> {
        if self.kind == ModelKind::Mf {
            return Ok(());
        }
        if store.num_modalities() != self.num_modalities() {
            return Err(BackboneError::ModalityCount {
                expected: self.num_modalities(),
                found: store.num_modalities(),
            });
        }
        if store.num_items() != self.num_items() {
            return Err(BackboneError::ItemCount {
                expected: self.num_items(),
                found: store.num_items(),
            });
        }
        for (m, w) in self.transforms.iter().enumerate() {
            let found = store.modality(m).dim();
            if found != w.ncols() {
                return Err(BackboneError::DimMismatch {
                    modality: m,
                    expected: w.ncols(),
                    found,
                });
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> BackboneParams<U> {
        let c2 = |a: &Array2<T>| a.mapv(|x| U::lit(x.to_f64_lossy()));
        BackboneParams {
            kind: self.kind,
            user_embed: c2(&self.user_embed),
            item_embed: c2(&self.item_embed),
            transforms: self.transforms.iter().map(c2).collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.mapv(|x| U::lit(x.to_f64_lossy())))
                .collect(),
            user_pref: self.user_pref.iter().map(c2).collect(),
        }
    }
}

/// Item features mapped into the shared space, one `num_items x d'` matrix per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedFeatures<T> {
    pub per_modality: Vec<Array2<T>>,
}

impl<T: Scalar> SharedFeatures<T> {
    pub fn compute(params: &BackboneParams<T>, store: &FeatureStore<T>) -> Result<Self, BackboneError> {
        if params.kind == ModelKind::Mf {
            return Ok(Self::none());
        }
        params.check_store(store)?;
        let per_modality = (0..params.num_modalities())
            .map(|m| transform_features(params, store, m))
            .collect::<Result<_, _>>()?;
        Ok(Self { per_modality })
    }

    pub fn none() -> Self {
        Self {
            per_modality: Vec::new(),
        }
    }

    pub fn num_modalities(&self) -> usize {
        self.per_modality.len()
    }

    pub fn shared_dim(&self) -> usize {
        self.per_modality.first().map_or(0, |m| m.ncols())
    }

    pub fn row(&self, m: usize, item: usize) -> ArrayView1<'_, T> {
        self.per_modality[m].row(item)
    }
}

/// `e W_m^T + b_m` for every item row.
pub fn transform_features<T: Scalar>(
    params: &BackboneParams<T>,
    store: &FeatureStore<T>,
    modality: usize,
) -> Result<Array2<T>, BackboneError> {
    let w = &params.transforms[modality];
    let e = &store.modality(modality).values;
    if e.ncols() != w.ncols() {
        return Err(BackboneError::DimMismatch {
            modality,
            expected: w.ncols(),
            found: e.ncols(),
        });
    }
    let mut out = e.dot(&w.t());
    out += &params.biases[modality];
    Ok(out)
}

pub fn score<T: Scalar>(params: &BackboneParams<T>, shared: &SharedFeatures<T>, user: usize, item: usize) -> T {
    let mut s = dot(
        params.user_embed.row(user).as_slice().expect("contiguous"),
        params.item_embed.row(item).as_slice().expect("contiguous"),
    );
    if params.kind == ModelKind::Vbpr {
        for m in 0..shared.num_modalities() {
            s += params.user_pref[m].row(user).dot(&shared.row(m, item));
        }
    }
    s
}

/// Concatenated user/item representations, so that a score matrix is one product.
#[derive(Debug, Clone)]
pub struct ScoringView<T> {
    pub users: Array2<T>,
    pub items: Array2<T>,
}

impl<T: Scalar> ScoringView<T> {
    pub fn new(params: &BackboneParams<T>, shared: &SharedFeatures<T>) -> Self {
        let d = params.embed_dim();
        let m = if params.kind == ModelKind::Vbpr {
            shared.num_modalities()
        } else {
            0
        };
        let dp = shared.shared_dim();
        let width = d + m * dp;
        let mut users = Array2::zeros((params.num_users(), width));
        let mut items = Array2::zeros((params.num_items(), width));
        users.slice_mut(s![.., ..d]).assign(&params.user_embed);
        items.slice_mut(s![.., ..d]).assign(&params.item_embed);
        for k in 0..m {
            let cols = s![.., d + k * dp..d + (k + 1) * dp];
            users.slice_mut(cols).assign(&params.user_pref[k]);
            items.slice_mut(cols).assign(&shared.per_modality[k]);
        }
        Self { users, items }
    }

    /// Scores of users `range` against every item.
    pub fn block(&self, range: std::ops::Range<usize>) -> Array2<T> {
        self.users.slice(s![range, ..]).dot(&self.items.t())
    }
}

/// Loss of a batch and gradients of every tensor.
#[derive(Debug, Clone)]
pub struct BatchGrads<T> {
    /// BPR term plus regulariser.
    pub loss: T,
    pub bpr_loss: T,
    /// Same shapes as the parameters; `grads.transforms` is `dL/dW_m` and
    /// comes from the BPR term only (the regulariser never touches `W_m`).
    pub grads: BackboneParams<T>,
}

fn triple_regulariser<T: Scalar>(params: &BackboneParams<T>, t: &TrainTriple) -> T {
    let sq = |v: ArrayView1<'_, T>| v.iter().map(|&x| x * x).sum::<T>();
    let mut r = sq(params.user_embed.row(t.user))
        + sq(params.item_embed.row(t.pos_item))
        + sq(params.item_embed.row(t.neg_item));
    for p in &params.user_pref {
        r += sq(p.row(t.user));
    }
    r
}

/// `mean_b [ w_pos * softplus(-(y_ui - y_uj)) ] + l2 * mean_b ||theta_b||^2`.
///
/// `weights` is indexed by item. The regulariser covers the embeddings a
/// triple touches: `x_u`, `x_i`, `x_j` and every `p_u^m`.
pub fn weighted_bpr_loss<T: Scalar>(
    params: &BackboneParams<T>,
    shared: &SharedFeatures<T>,
    triples: &[TrainTriple],
    weights: &[T],
    l2_reg: T,
) -> T {
    assert!(!triples.is_empty(), "empty batch");
    let inv_b = T::one() / T::from_count(triples.len());
    let mut bpr = T::zero();
    let mut reg = T::zero();
    for t in triples {
        let x = score(params, shared, t.user, t.pos_item) - score(params, shared, t.user, t.neg_item);
        bpr += weights[t.pos_item] * softplus(-x);
        if l2_reg != T::zero() {
            reg += triple_regulariser(params, t);
        }
    }
    (bpr + l2_reg * reg) * inv_b
}

/// Analytic gradients of [`weighted_bpr_loss`].
pub fn backbone_grads<T: Scalar>(
    params: &BackboneParams<T>,
    shared: &SharedFeatures<T>,
    store: &FeatureStore<T>,
    triples: &[TrainTriple],
    weights: &[T],
    l2_reg: T,
) -> BatchGrads<T> {
    assert!(!triples.is_empty(), "empty batch");
    let mut g = params.zeros_like();
    let inv_b = T::one() / T::from_count(triples.len());
    let two_reg = (l2_reg + l2_reg) * inv_b;
    let mut bpr = T::zero();
    let mut reg = T::zero();
    let d = params.embed_dim();
    let vbpr = params.kind == ModelKind::Vbpr;
    let m_count = if vbpr { params.num_modalities() } else { 0 };
    let mut diff_e: Vec<T> = Vec::new();
    for t in triples {
        let (u, i, j) = (t.user, t.pos_item, t.neg_item);
        let x = score(params, shared, u, i) - score(params, shared, u, j);
        let w = weights[i];
        bpr += w * softplus(-x);
        // d/dx of w * softplus(-x), scaled by the batch mean.
        let c = -w * sigmoid(-x) * inv_b;
        if l2_reg != T::zero() {
            reg += triple_regulariser(params, t);
        }
        for k in 0..d {
            let (xu, xi, xj) = (
                params.user_embed[[u, k]],
                params.item_embed[[i, k]],
                params.item_embed[[j, k]],
            );
            g.user_embed[[u, k]] += c * (xi - xj) + two_reg * xu;
            g.item_embed[[i, k]] += c * xu + two_reg * xi;
            g.item_embed[[j, k]] += -c * xu + two_reg * xj;
        }
        for m in 0..m_count {
            let p = params.user_pref[m].row(u);
            let (ei, ej) = (shared.row(m, i), shared.row(m, j));
            for k in 0..p.len() {
                g.user_pref[m][[u, k]] += c * (ei[k] - ej[k]) + two_reg * p[k];
            }
            let (ri, rj) = (store.row(m, i), store.row(m, j));
            diff_e.clear();
            diff_e.extend(ri.iter().zip(rj.iter()).map(|(&a, &b)| a - b));
            let gw = &mut g.transforms[m];
            for (r, &pk) in p.iter().enumerate() {
                let coef = c * pk;
                if coef == T::zero() {
                    continue;
                }
                for (gv, &de) in gw.row_mut(r).iter_mut().zip(&diff_e) {
                    *gv += coef * de;
                }
            }
            // The bias enters both scores identically and cancels: its gradient stays 0.
        }
    }
    BatchGrads {
        loss: (bpr + l2_reg * reg) * inv_b,
        bpr_loss: bpr * inv_b,
        grads: g,
    }
}
