//! Dense row-major f32 tensor with an optional gradient buffer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense multidimensional array of 32-bit reals. Trainable tensors carry a
/// same-shape gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<f32>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "value count must match shape"
        );
        Tensor {
            shape: shape.to_vec(),
            values,
            grad: None,
        }
    }

    /// Allocates the gradient buffer, marking the tensor trainable.
    pub fn trainable(mut self) -> Tensor {
        let n = self.values.len();
        self.grad = Some(vec![0.0; n]);
        self
    }

    /// Glorot-uniform initialized trainable tensor:
    /// U(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))).
    pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut t = Tensor::zeros(shape);
        for v in &mut t.values {
            *v = rng.gen_range(-a..a) as f32;
        }
        t.trainable()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn is_trainable(&self) -> bool {
        self.grad.is_some()
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut [f32] {
        self.grad.as_deref_mut().expect("tensor has no gradient buffer")
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }

    /// Accumulates into the gradient buffer if one is allocated.
    #[inline]
    pub fn add_grad(&mut self, idx: usize, delta: f64) {
        if let Some(g) = &mut self.grad {
            g[idx] += delta as f32;
        }
    }

    /// Value at a flat index, widened for f64 arithmetic.
    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        f64::from(self.values[idx])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;

    #[test]
    fn glorot_range_and_determinism() {
        let mut r1 = seeded_rng(5, "t");
        let mut r2 = seeded_rng(5, "t");
        let a = Tensor::glorot(&[4, 3], 4, 3, &mut r1);
        let b = Tensor::glorot(&[4, 3], 4, 3, &mut r2);
        assert_eq!(a.values(), b.values());
        let bound = (6.0f32 / 7.0).sqrt();
        assert!(a.values().iter().all(|v| v.abs() <= bound));
        assert!(a.is_trainable());
    }

    #[test]
    fn grad_accumulation() {
        let mut t = Tensor::zeros(&[2]).trainable();
        t.add_grad(0, 1.5);
        t.add_grad(0, 0.5);
        assert_eq!(t.grad().unwrap(), &[2.0, 0.0]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn non_trainable_ignores_grads() {
        let mut t = Tensor::zeros(&[2]);
        t.add_grad(1, 3.0);
        assert!(t.grad().is_none());
    }
}
