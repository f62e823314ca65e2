//! Adam over flat parameter slices.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    /// One moment buffer per tensor, sized from `shapes`.
    pub fn new(lr: T, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// Advances the step counter; call once per update before `apply`.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Bias-corrected update of tensor `slot`. A zero learning rate leaves
    /// the parameters untouched bit for bit.
    pub fn apply(&mut self, slot: usize, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), grads.len());
        let t = i32::try_from(self.step.max(1)).unwrap_or(i32::MAX);
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        let step = self.lr * c2.sqrt() / c1;
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        let (b1, b2) = (self.beta1, self.beta2);
        let eps_hat = self.eps * c2.sqrt();
        for ((p, &g), (mi, vi)) in params.iter_mut().zip(grads).zip(m.iter_mut().zip(v.iter_mut())) {
            *mi = b1 * *mi + (T::one() - b1) * g;
            *vi = b2 * *vi + (T::one() - b2) * g * g;
            if self.lr != T::zero() {
                *p -= step * *mi / (vi.sqrt() + eps_hat);
            }
        }
    }

    /// Updates only the listed coordinates of a single-tensor parameter.
    pub fn apply_sparse(&mut self, slot: usize, params: &mut [T], grads: &[T], idx: &[usize]) {
        let t = i32::try_from(self.step.max(1)).unwrap_or(i32::MAX);
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        let step = self.lr * c2.sqrt() / c1;
        let eps_hat = self.eps * c2.sqrt();
        for &i in idx {
            let g = grads[i];
            let mi = &mut self.m[slot][i];
            *mi = self.beta1 * *mi + (T::one() - self.beta1) * g;
            let vi = &mut self.v[slot][i];
            *vi = self.beta2 * *vi + (T::one() - self.beta2) * g * g;
            if self.lr != T::zero() {
                params[i] -= step * self.m[slot][i] / (self.v[slot][i].sqrt() + eps_hat);
            }
        }
    }
}
