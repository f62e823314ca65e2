//! Task-relevant importance of shared-space dimensions.
//!
//! Importance of output dimension `i` of modality `m` is the accumulated
//! absolute BPR gradient of row `i` of `W_m`; a scaled softmax turns it into
//! a mask whose entries sum to the shared dimension.

use std::io::Write;

use ndarray::Array2;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("no gradient batches were observed; mask undefined")]
    NoBatches,
    #[error("gradient shape mismatch for modality {0}")]
    Shape(usize),
    #[error("importance of modality {0} is not finite")]
    NonFinite(usize),
}

/// Normalised importance per modality; each vector sums to its length.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMask<T> {
    pub per_modality: Vec<Vec<T>>,
}

impl<T: Scalar> TaskMask<T> {
    pub fn uniform(num_modalities: usize, shared_dim: usize) -> Self {
        Self {
            per_modality: vec![vec![T::one(); shared_dim]; num_modalities],
        }
    }

    pub fn num_modalities(&self) -> usize {
        self.per_modality.len()
    }

    /// `epoch\tmodality\tdim\talpha_bar` rows.
    pub fn write_tsv<W: Write>(&self, epoch: usize, names: &[String], mut out: W) -> std::io::Result<()> {
        for (m, v) in self.per_modality.iter().enumerate() {
            for (d, a) in v.iter().enumerate() {
                writeln!(out, "{epoch}\t{}\t{d}\t{a}", names[m])?;
            }
        }
        Ok(())
    }
}

/// Running sum of `|dL/dW_m|` row sums over an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceAccumulator<T> {
    sums: Vec<Vec<T>>,
    batches: usize,
}

impl<T: Scalar> ImportanceAccumulator<T> {
    pub fn new(shared_dim: usize, num_modalities: usize) -> Self {
        Self {
            sums: vec![vec![T::zero(); shared_dim]; num_modalities],
            batches: 0,
        }
    }

    /// Adds one batch worth of transform gradients (one `d' x d_m` per modality).
    pub fn observe(&mut self, grad_w: &[Array2<T>]) -> Result<(), MaskError> {
        for (m, (acc, g)) in self.sums.iter_mut().zip(grad_w).enumerate() {
            if g.nrows() != acc.len() {
                return Err(MaskError::Shape(m));
            }
            for (a, row) in acc.iter_mut().zip(g.rows()) {
                *a += row.iter().map(|x| x.abs()).sum::<T>();
            }
        }
        self.batches += 1;
        Ok(())
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    /// Raw importance vectors.
    pub fn finish(&self) -> Result<Vec<Vec<T>>, MaskError> {
        if self.batches == 0 {
            return Err(MaskError::NoBatches);
        }
        Ok(self.sums.clone())
    }

    pub fn mask(&self, temperature: T) -> Result<TaskMask<T>, MaskError> {
        let raw = self.finish()?;
        let per_modality = raw
            .iter()
            .enumerate()
            .map(|(m, a)| {
                if a.iter().all(|x| x.is_finite()) {
                    Ok(normalize_mask(a, temperature))
                } else {
                    Err(MaskError::NonFinite(m))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(TaskMask { per_modality })
    }
}

/// Raw importance of a stream of gradient matrices for one modality.
pub fn accumulate_importance<'a, T: Scalar, I>(grads: I) -> Result<Vec<T>, MaskError>
where
    I: IntoIterator<Item = &'a Array2<T>>,
{
    let mut acc: Option<ImportanceAccumulator<T>> = None;
    for g in grads {
        let a = acc.get_or_insert_with(|| ImportanceAccumulator::new(g.nrows(), 1));
        a.observe(std::slice::from_ref(g))?;
    }
    Ok(acc.ok_or(MaskError::NoBatches)?.finish()?.remove(0))
}

/// `softmax(alpha / temperature) * len`, max-shifted.
pub fn normalize_mask<T: Scalar>(alpha: &[T], temperature: T) -> Vec<T> {
    let n = alpha.len();
    if n == 0 {
        return Vec::new();
    }
    let scaled: Vec<T> = alpha.iter().map(|&a| a / temperature).collect();
    let max = scaled.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scaled.iter().map(|&a| (a - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    let scale = T::from_count(n) / z;
    exps.into_iter().map(|e| e * scale).collect()
}
