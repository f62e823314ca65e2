//! RBF kernels and the Hilbert–Schmidt independence criterion.
//!
//! The default (`per_item`) objective treats the d' coordinates of one item's
//! two shared-space modality vectors as paired samples and scores their
//! dependence; every item contributes its own statistic. The `population`
//! objective instead treats items as samples and uses the weights as sample
//! weights of a weighted V-statistic.

use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::Array2;
use thiserror::Error;

use crate::backbone::SharedFeatures;
use crate::mask::TaskMask;
use crate::scalar::Scalar;
use crate::weights::SampleWeights;

/// Values in `[-NEG_TOLERANCE, 0)` are rounding noise and clamp to zero.
pub const NEG_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum HsicError {
    #[error("kernel input contains a non-finite value")]
    NonFinite,
    #[error("kernel bandwidth must be positive, got {0}")]
    BadSigma(f64),
    #[error("need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("HSIC evaluated to {0}, below the rounding tolerance")]
    Negative(f64),
    #[error("modalities disagree on the shared dimension")]
    SharedDimMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HsicMode {
    #[default]
    PerItem,
    Population,
}

impl FromStr for HsicMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_item" => Ok(HsicMode::PerItem),
            "population" => Ok(HsicMode::Population),
            other => Err(format!("unknown hsic mode `{other}`")),
        }
    }
}

impl fmt::Display for HsicMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HsicMode::PerItem => "per_item",
            HsicMode::Population => "population",
        })
    }
}

/// Gram matrix of the RBF kernel over scalar samples.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix<T> {
    pub entries: Array2<T>,
    pub sigma: T,
}

/// `P = I - (1/n) 11^T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CenteringMatrix {
    pub dim: usize,
}

impl CenteringMatrix {
    pub fn matrix<T: Scalar>(&self) -> Array2<T> {
        let n = self.dim;
        let off = -T::one() / T::from_count(n);
        Array2::from_shape_fn((n, n), |(i, j)| if i == j { T::one() + off } else { off })
    }
}

fn check_sigma<T: Scalar>(sigma: T) -> Result<(), HsicError> {
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(HsicError::BadSigma(sigma.to_f64_lossy()));
    }
    Ok(())
}

/// `K[i][j] = exp(-(u_i - u_j)^2 / sigma^2)`.
pub fn rbf_kernel<T: Scalar>(u: &[T], sigma: T) -> Result<KernelMatrix<T>, HsicError> {
    if u.len() < 2 {
        return Err(HsicError::TooShort(u.len()));
    }
    if !u.iter().all(|x| x.is_finite()) {
        return Err(HsicError::NonFinite);
    }
    check_sigma(sigma)?;
    let s2 = sigma * sigma;
    let n = u.len();
    let mut k = Array2::from_elem((n, n), T::one());
    for i in 0..n {
        for j in (i + 1)..n {
            let d = u[i] - u[j];
            let v = (-(d * d) / s2).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(KernelMatrix { entries: k, sigma })
}

fn median<T: Scalar>(mut xs: Vec<T>) -> T {
    let n = xs.len();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / T::lit(2.0)
    }
}

/// Median of pairwise absolute differences, or 1 when that median is zero.
pub fn median_heuristic_sigma<T: Scalar>(u: &[T]) -> T {
    let mut diffs = Vec::with_capacity(u.len() * u.len().saturating_sub(1) / 2);
    for i in 0..u.len() {
        for j in (i + 1)..u.len() {
            diffs.push((u[i] - u[j]).abs());
        }
    }
    if diffs.is_empty() {
        return T::one();
    }
    let m = median(diffs);
    if m > T::zero() {
        m
    } else {
        T::one()
    }
}

/// `sum_ij (P K P)_ij L_ij`, i.e. `tr(K P L P)` for symmetric `K`, `L`.
fn centered_inner<T: Scalar>(k: &Array2<T>, l: &Array2<T>) -> T {
    center(k)
        .iter()
        .zip(l.iter())
        .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

/// Double centering `P K P` via row and grand means.
fn center<T: Scalar>(k: &Array2<T>) -> Array2<T> {
    let n = k.nrows();
    let inv = T::one() / T::from_count(n);
    let means: Vec<T> = k.rows().into_iter().map(|r| r.sum() * inv).collect();
    let grand = means.iter().copied().sum::<T>() * inv;
    Array2::from_shape_fn((n, n), |(i, j)| k[[i, j]] - means[i] - means[j] + grand)
}

fn clamp_statistic<T: Scalar>(v: T) -> Result<T, HsicError> {
    if v >= T::zero() {
        Ok(v)
    } else if v >= -T::lit(NEG_TOLERANCE) {
        Ok(T::zero())
    } else {
        Err(HsicError::Negative(v.to_f64_lossy()))
    }
}

/// `(n-1)^-2 tr(K_U P K_V P)` with RBF kernels of the given bandwidths.
pub fn empirical_hsic<T: Scalar>(u: &[T], v: &[T], sigma_u: T, sigma_v: T) -> Result<T, HsicError> {
    if u.len() != v.len() {
        return Err(HsicError::LengthMismatch(u.len(), v.len()));
    }
    let ku = rbf_kernel(u, sigma_u)?;
    let kv = rbf_kernel(v, sigma_v)?;
    let n1 = T::from_count(u.len() - 1);
    clamp_statistic(centered_inner(&ku.entries, &kv.entries) / (n1 * n1))
}

/// HSIC of `(w a, w b)` at fixed bandwidths, and its derivative in `w`.
pub(crate) fn scaled_pair_hsic<T: Scalar>(a: &[T], b: &[T], sigma_a: T, sigma_b: T, w: T) -> (T, T) {
    let n = a.len();
    let (ia, ib) = (T::one() / (sigma_a * sigma_a), T::one() / (sigma_b * sigma_b));
    let w2 = w * w;
    let two_w = w + w;
    let mut k = Array2::from_elem((n, n), T::one());
    let mut l = Array2::from_elem((n, n), T::one());
    let mut dk = Array2::zeros((n, n));
    let mut dl = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let qa = (a[i] - a[j]) * (a[i] - a[j]) * ia;
            let qb = (b[i] - b[j]) * (b[i] - b[j]) * ib;
            let ka = (-w2 * qa).exp();
            let kb = (-w2 * qb).exp();
            let (dka, dkb) = (-two_w * qa * ka, -two_w * qb * kb);
            k[[i, j]] = ka;
            k[[j, i]] = ka;
            l[[i, j]] = kb;
            l[[j, i]] = kb;
            dk[[i, j]] = dka;
            dk[[j, i]] = dka;
            dl[[i, j]] = dkb;
            dl[[j, i]] = dkb;
        }
    }
    let (kc, lc) = (center(&k), center(&l));
    let norm = {
        let n1 = T::from_count(n - 1);
        T::one() / (n1 * n1)
    };
    let mut value = T::zero();
    let mut deriv = T::zero();
    for idx in 0..n * n {
        let (i, j) = (idx / n, idx % n);
        value += kc[[i, j]] * l[[i, j]];
        deriv += dk[[i, j]] * lc[[i, j]] + kc[[i, j]] * dl[[i, j]];
    }
    (value * norm, deriv * norm)
}

fn modality_pairs(m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..m {
        for b in (a + 1)..m {
            out.push((a, b));
        }
    }
    out
}

/// Median pairwise Euclidean distance between rows, 1 if degenerate.
fn row_median_distance<T: Scalar>(rows: &[Vec<T>]) -> T {
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let s: T = rows[i].iter().zip(&rows[j]).map(|(&x, &y)| (x - y) * (x - y)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return T::one();
    }
    let m = median(d);
    if m > T::zero() {
        m
    } else {
        T::one()
    }
}

#[derive(Debug, Clone)]
enum Prepared<T> {
    PerItem {
        /// `[subset position][modality]` masked, unweighted vectors.
        vectors: Vec<Vec<Vec<T>>>,
        /// Bandwidth per vector, frozen for the phase.
        sigmas: Vec<Vec<T>>,
    },
    Population {
        /// Item-by-item RBF Gram matrix per modality.
        kernels: Vec<Array2<T>>,
    },
}

/// The masked, weighted HSIC objective with bandwidths frozen at construction.
#[derive(Debug, Clone)]
pub struct HsicObjective<T> {
    mode: HsicMode,
    subset: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    prepared: Prepared<T>,
}

impl<T: Scalar> HsicObjective<T> {
    pub fn new(
        shared: &SharedFeatures<T>,
        mask: &TaskMask<T>,
        subset: &[usize],
        mode: HsicMode,
    ) -> Result<Self, HsicError> {
        let m = shared.num_modalities();
        let dp = shared.shared_dim();
        if shared.per_modality.iter().any(|x| x.ncols() != dp)
            || mask.num_modalities() != m
            || mask.per_modality.iter().any(|a| a.len() != dp)
        {
            return Err(HsicError::SharedDimMismatch);
        }
        if m >= 1 && dp < 2 {
            return Err(HsicError::TooShort(dp));
        }
        let masked = |item: usize, mi: usize| -> Result<Vec<T>, HsicError> {
            let row = shared.per_modality[mi].row(item);
            let v: Vec<T> = row.iter().zip(&mask.per_modality[mi]).map(|(&e, &a)| e * a).collect();
            if v.iter().all(|x| x.is_finite()) {
                Ok(v)
            } else {
                Err(HsicError::NonFinite)
            }
        };
        let prepared = match mode {
            HsicMode::PerItem => {
                let mut vectors = Vec::with_capacity(subset.len());
                let mut sigmas = Vec::with_capacity(subset.len());
                for &item in subset {
                    let vs = (0..m).map(|mi| masked(item, mi)).collect::<Result<Vec<_>, _>>()?;
                    sigmas.push(vs.iter().map(|v| median_heuristic_sigma(v)).collect());
                    vectors.push(vs);
                }
                Prepared::PerItem { vectors, sigmas }
            }
            HsicMode::Population => {
                let mut kernels = Vec::with_capacity(m);
                for mi in 0..m {
                    let rows = subset.iter().map(|&i| masked(i, mi)).collect::<Result<Vec<_>, _>>()?;
                    let sigma = row_median_distance(&rows);
                    let inv = T::one() / (sigma * sigma);
                    let n = rows.len();
                    let mut k = Array2::from_elem((n, n), T::one());
                    for i in 0..n {
                        for j in (i + 1)..n {
                            let s: T = rows[i].iter().zip(&rows[j]).map(|(&x, &y)| (x - y) * (x - y)).sum();
                            let v = (-s * inv).exp();
                            k[[i, j]] = v;
                            k[[j, i]] = v;
                        }
                    }
                    kernels.push(k);
                }
                Prepared::Population { kernels }
            }
        };
        Ok(Self {
            mode,
            subset: subset.to_vec(),
            pairs: modality_pairs(m),
            prepared,
        })
    }

    pub fn mode(&self) -> HsicMode {
        self.mode
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    /// Per-item contributions (per-item mode) in subset order.
    pub fn item_terms(&self, weights: &[T]) -> Vec<T> {
        match &self.prepared {
            Prepared::PerItem { vectors, sigmas } => self
                .subset
                .iter()
                .enumerate()
                .map(|(p, &item)| {
                    self.pairs
                        .iter()
                        .map(|&(a, b)| {
                            scaled_pair_hsic(
                                &vectors[p][a],
                                &vectors[p][b],
                                sigmas[p][a],
                                sigmas[p][b],
                                weights[item],
                            )
                            .0
                        })
                        .sum()
                })
                .collect(),
            Prepared::Population { .. } => Vec::new(),
        }
    }

    /// HSIC value and its gradient with respect to the per-item weights
    /// (indexed by item, zero outside the subset).
    pub fn value_and_weight_grad(&self, weights: &[T]) -> Result<(T, Vec<T>), HsicError> {
        let mut grad = vec![T::zero(); weights.len()];
        let mut total = T::zero();
        match &self.prepared {
            Prepared::PerItem { vectors, sigmas } => {
                for (p, &item) in self.subset.iter().enumerate() {
                    for &(a, b) in &self.pairs {
                        let (v, d) = scaled_pair_hsic(
                            &vectors[p][a],
                            &vectors[p][b],
                            sigmas[p][a],
                            sigmas[p][b],
                            weights[item],
                        );
                        total += clamp_statistic(v)?;
                        grad[item] += d;
                    }
                }
            }
            Prepared::Population { kernels } => {
                let w: Vec<T> = self.subset.iter().map(|&i| weights[i]).collect();
                for &(a, b) in &self.pairs {
                    let (v, g) = weighted_population_hsic(&kernels[a], &kernels[b], &w);
                    total += clamp_statistic(v)?;
                    for (p, &item) in self.subset.iter().enumerate() {
                        grad[item] += g[p];
                    }
                }
            }
        }
        Ok((total, grad))
    }

    pub fn loss(&self, weights: &SampleWeights<T>) -> Result<T, HsicError> {
        Ok(self.value_and_weight_grad(&weights.values())?.0)
    }

    /// `gamma * mean_{subset} (w - 1)^2`.
    pub fn penalty(&self, weights: &SampleWeights<T>, gamma: T) -> T {
        if self.subset.is_empty() {
            return T::zero();
        }
        let s: T = self
            .subset
            .iter()
            .map(|&i| {
                let d = weights.weight(i) - T::one();
                d * d
            })
            .sum();
        gamma * s / T::from_count(self.subset.len())
    }

    /// Objective (HSIC + anchor penalty) and its gradient in the logits.
    pub fn objective_and_logit_grad(&self, weights: &SampleWeights<T>, gamma: T) -> Result<(T, Vec<T>), HsicError> {
        let w = weights.values();
        let (hsic, wgrad) = self.value_and_weight_grad(&w)?;
        let objective = hsic + self.penalty(weights, gamma);
        let n = T::from_count(self.subset.len().max(1));
        let two = T::lit(2.0);
        let mut grad = vec![T::zero(); w.len()];
        for &i in &self.subset {
            let dw = wgrad[i] + two * gamma * (w[i] - T::one()) / n;
            grad[i] = dw * weights.dweight_dlogit(i);
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(HsicError::NonFinite);
        }
        Ok((objective, grad))
    }
}

/// Weighted V-statistic HSIC with normalised weights `pi = w / sum(w)`, and
/// its gradient with respect to the raw weights `w`.
pub(crate) fn weighted_population_hsic<T: Scalar>(k: &Array2<T>, l: &Array2<T>, w: &[T]) -> (T, Vec<T>) {
    let n = w.len();
    let total: T = w.iter().copied().sum();
    if n == 0 || total <= T::zero() {
        return (T::zero(), vec![T::zero(); n]);
    }
    let pi: Vec<T> = w.iter().map(|&x| x / total).collect();
    let kp: Vec<T> = (0..n).map(|i| (0..n).map(|j| k[[i, j]] * pi[j]).sum()).collect();
    let lp: Vec<T> = (0..n).map(|i| (0..n).map(|j| l[[i, j]] * pi[j]).sum()).collect();
    let pkp: T = (0..n).map(|i| pi[i] * kp[i]).sum();
    let plp: T = (0..n).map(|i| pi[i] * lp[i]).sum();
    let pk: Vec<T> = (0..n).map(|i| pi[i] * kp[i]).collect();
    let pl: Vec<T> = (0..n).map(|i| pi[i] * lp[i]).collect();
    let mut t1 = T::zero();
    let mut t2 = T::zero();
    let two = T::lit(2.0);
    let mut g = vec![T::zero(); n];
    for m in 0..n {
        let mut kl = T::zero();
        let mut k_pl = T::zero();
        let mut l_pk = T::zero();
        for j in 0..n {
            kl += k[[m, j]] * l[[m, j]] * pi[j];
            k_pl += k[[m, j]] * pl[j];
            l_pk += l[[m, j]] * pk[j];
        }
        t1 += pi[m] * kl;
        t2 += pi[m] * kp[m] * lp[m];
        g[m] = two * kl - two * (kp[m] * lp[m] + k_pl + l_pk) + two * (kp[m] * plp + lp[m] * pkp);
    }
    let value = t1 - two * t2 + pkp * plp;
    let mean_g: T = (0..n).map(|m| pi[m] * g[m]).sum();
    let grad = g.into_iter().map(|gm| (gm - mean_g) / total).collect();
    (value, grad)
}

/// Sum over subset items and unordered modality pairs of
/// `HSIC(w_i a^{m1} * e_i^{m1}, w_i a^{m2} * e_i^{m2})`.
pub fn masked_weighted_hsic_loss<T: Scalar>(
    shared: &SharedFeatures<T>,
    mask: &TaskMask<T>,
    weights: &SampleWeights<T>,
    item_subset: &[usize],
    mode: HsicMode,
) -> Result<T, HsicError> {
    if item_subset.is_empty() {
        warn!("HSIC loss over an empty item subset is 0");
        return Ok(T::zero());
    }
    HsicObjective::new(shared, mask, item_subset, mode)?.loss(weights)
}

/// Gradient of HSIC loss plus `gamma * mean((w-1)^2)` with respect to the logits.
pub fn hsic_grad_weight_logits<T: Scalar>(
    shared: &SharedFeatures<T>,
    mask: &TaskMask<T>,
    weights: &SampleWeights<T>,
    item_subset: &[usize],
    mode: HsicMode,
    gamma: T,
) -> Result<Vec<T>, HsicError> {
    Ok(HsicObjective::new(shared, mask, item_subset, mode)?
        .objective_and_logit_grad(weights, gamma)?
        .1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Literal `(n-1)^-2 tr(K P L P)` with explicit matrix products.
    fn trace_oracle(u: &[f64], v: &[f64], su: f64, sv: f64) -> f64 {
        let n = u.len();
        let k = Array2::from_shape_fn((n, n), |(i, j)| (-(u[i] - u[j]).powi(2) / (su * su)).exp());
        let l = Array2::from_shape_fn((n, n), |(i, j)| (-(v[i] - v[j]).powi(2) / (sv * sv)).exp());
        let p: Array2<f64> = CenteringMatrix { dim: n }.matrix();
        let kplp = matmul(&matmul(&matmul(&k, &p), &l), &p);
        kplp.diag().sum() / ((n - 1) as f64).powi(2)
    }

    fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let n = a.nrows();
        Array2::from_shape_fn((n, b.ncols()), |(i, j)| {
            (0..a.ncols()).map(|k| a[[i, k]] * b[[k, j]]).sum()
        })
    }

    #[test]
    fn constant_input_gives_all_ones_kernel() {
        let k = rbf_kernel(&[2.5f64, 2.5, 2.5], 0.7).unwrap();
        assert!(k.entries.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn two_point_kernel_closed_form() {
        let k = rbf_kernel(&[0.0f64, 1.0], 1.0).unwrap();
        assert_abs_diff_eq!(k.entries[[0, 1]], (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(k.entries[[0, 1]], 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn kernel_matches_double_loop() {
        let u = [0.0f64, 1.0, 3.0];
        let k = rbf_kernel(&u, 2.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = u[i] - u[j];
                assert_abs_diff_eq!(k.entries[[i, j]], (-d * d / 4.0).exp(), epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(k.entries[[0, 2]], (-9.0f64 / 4.0).exp(), epsilon = 1e-15);
    }

    #[test]
    fn kernel_errors() {
        assert_eq!(rbf_kernel(&[0.0f64, f64::NAN], 1.0).unwrap_err(), HsicError::NonFinite);
        assert!(matches!(rbf_kernel(&[0.0f64, 1.0], 0.0), Err(HsicError::BadSigma(_))));
        assert!(matches!(rbf_kernel(&[0.0f64, 1.0], -1.0), Err(HsicError::BadSigma(_))));
    }

    #[test]
    fn centering_is_idempotent() {
        for n in 2..7 {
            let p: Array2<f64> = CenteringMatrix { dim: n }.matrix();
            let pp = matmul(&p, &p);
            for (a, b) in p.iter().zip(pp.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
            for r in p.rows() {
                assert!(r.sum().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn median_heuristic_examples() {
        assert_eq!(median_heuristic_sigma(&[0.0f64, 2.0]), 2.0);
        assert_eq!(median_heuristic_sigma(&[1.0f64, 1.0, 1.0]), 1.0);
        // pairs: 1,2,4,1,3,2 -> sorted 1,1,2,2,3,4 -> median 2
        assert_eq!(median_heuristic_sigma(&[0.0f64, 1.0, 2.0, 4.0]), 2.0);
    }

    #[test]
    fn constant_argument_gives_zero() {
        assert_eq!(
            empirical_hsic(&[1.0f64, 1.0, 1.0], &[0.3, -2.0, 5.0], 1.0, 1.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn hsic_matches_explicit_products() {
        let u = [0.0f64, 1.0, 2.0];
        let h = empirical_hsic(&u, &u, 1.0, 1.0).unwrap();
        let oracle = trace_oracle(&u, &u, 1.0, 1.0);
        assert_abs_diff_eq!(h, oracle, epsilon = 1e-14);
        assert!(h > 0.0);
    }

    #[test]
    fn dependent_beats_shuffled() {
        let u = [0.0f64, 1.0, 2.0, 3.0];
        let v = [7.0f64, -2.0, 5.0, 0.0];
        let su = median_heuristic_sigma(&u);
        let sv = median_heuristic_sigma(&v);
        let dep = empirical_hsic(&u, &u, su, su).unwrap();
        let shuf = empirical_hsic(&u, &v, su, sv).unwrap();
        assert!(dep > shuf, "{dep} <= {shuf}");
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(
            empirical_hsic(&[0.0f64, 1.0], &[0.0, 1.0, 2.0], 1.0, 1.0).unwrap_err(),
            HsicError::LengthMismatch(2, 3)
        );
    }

    #[test]
    fn clamp_rules() {
        assert_eq!(clamp_statistic(-1e-13f64).unwrap(), 0.0);
        assert!(clamp_statistic(-1e-9f64).is_err());
    }

    #[test]
    fn scaled_pair_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(2..8);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (sa, sb) = (median_heuristic_sigma(&a), median_heuristic_sigma(&b));
            let w = rng.random_range(0.3..1.7);
            let h = 1e-5;
            let (_, d) = scaled_pair_hsic(&a, &b, sa, sb, w);
            let fd =
                (scaled_pair_hsic(&a, &b, sa, sb, w + h).0 - scaled_pair_hsic(&a, &b, sa, sb, w - h).0) / (2.0 * h);
            assert!((d - fd).abs() <= 1e-4 * d.abs().max(1e-6), "{d} vs {fd}");
        }
    }

    #[test]
    fn population_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 6;
        let pts: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let qts: Vec<f64> = pts.iter().map(|p| p * 0.8 + rng.random_range(-0.3..0.3)).collect();
        let k = rbf_kernel(&pts, 0.7).unwrap().entries;
        let l = rbf_kernel(&qts, 0.7).unwrap().entries;
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let (v, g) = weighted_population_hsic(&k, &l, &w);
        // Uniform weights reduce to tr(KHLH)/n^2.
        let (v1, _) = weighted_population_hsic(&k, &l, &[1.0; 6]);
        let oracle = trace_oracle(&pts, &qts, 0.7, 0.7) * 25.0 / 36.0;
        assert_abs_diff_eq!(v1, oracle, epsilon = 1e-12);
        assert!(v > 0.0);
        for i in 0..n {
            let h = 1e-6;
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let fd = (weighted_population_hsic(&k, &l, &wp).0 - weighted_population_hsic(&k, &l, &wm).0) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-7), "{i}: {} vs {fd}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn symmetric_nonnegative_and_permutation_invariant(
            u in prop::collection::vec(-5.0f64..5.0, 2..9),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = u.iter().map(|x| x * rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0)).collect();
            let (su, sv) = (median_heuristic_sigma(&u), median_heuristic_sigma(&v));
            let uv = empirical_hsic(&u, &v, su, sv).unwrap();
            let vu = empirical_hsic(&v, &u, sv, su).unwrap();
            prop_assert!((uv - vu).abs() < 1e-12);
            prop_assert!(uv >= 0.0);
            let mut perm: Vec<usize> = (0..u.len()).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let pu: Vec<f64> = perm.iter().map(|&i| u[i]).collect();
            let pv: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
            let p = empirical_hsic(&pu, &pv, su, sv).unwrap();
            prop_assert!((p - uv).abs() < 1e-12);
        }
    }
}
