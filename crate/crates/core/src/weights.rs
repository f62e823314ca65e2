//! Per-item sample weights, parameterised through unconstrained logits.

use crate::scalar::{sigmoid, Scalar};

/// `w_i = sigmoid(logit_i) * w_max`, initialised so every `w_i` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights<T> {
    pub logits: Vec<T>,
    pub w_max: T,
}

impl<T: Scalar> SampleWeights<T> {
    /// # Panics
    /// If `w_max <= 1`, which leaves no logit that maps to weight 1.
    pub fn new(num_items: usize, w_max: T) -> Self {
        assert!(w_max > T::one(), "w_max must exceed 1");
        // sigmoid(-ln(w_max - 1)) * w_max = 1; exactly 0 when w_max = 2.
        let l0 = -(w_max - T::one()).ln();
        Self {
            logits: vec![l0; num_items],
            w_max,
        }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn weight(&self, i: usize) -> T {
        sigmoid(self.logits[i]) * self.w_max
    }

    pub fn values(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    /// `dw_i / dlogit_i = w_max * s * (1 - s)`.
    pub fn dweight_dlogit(&self, i: usize) -> T {
        let s = sigmoid(self.logits[i]);
        self.w_max * s * (T::one() - s)
    }
}
