use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Which elements of a parameter an update touches.
#[derive(Debug, Clone, Copy)]
pub enum Update<'a> {
    Dense,
    /// Only the listed elements of a rank-1 parameter (moments of other
    /// elements are left untouched).
    Elements(&'a [usize]),
    /// Like `Elements`, but the gradient slice is compact: entry `j` belongs
    /// to element `idx[j]`.
    Gathered(&'a [usize]),
}

/// Bias-corrected Adam. Holds one pair of moment buffers per registered
/// parameter and a single global step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    /// `sizes[i]` is the element count of parameter slot `i`.
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, slot: usize) -> (&[f64], &[f64]) {
        (&self.first[slot], &self.second[slot])
    }

    /// Zeroes the moments of selected elements, used when the quantity an
    /// element stands for is replaced.
    pub fn reset_elements(&mut self, slot: usize, elements: &[usize]) {
        for &e in elements {
            self.first[slot][e] = 0.0;
            self.second[slot][e] = 0.0;
        }
    }

    /// Applies one update to every slot. `params`, `grads` and `updates` are
    /// parallel to the slots given at construction.
    pub fn step(
        &mut self,
        params: &mut [(&str, &mut Tensor)],
        grads: &[&[f64]],
        updates: &[Update<'_>],
    ) -> Result<()> {
        if params.len() != self.first.len()
            || grads.len() != params.len()
            || updates.len() != params.len()
        {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                shapes: vec![
                    vec![self.first.len()],
                    vec![params.len()],
                    vec![grads.len()],
                ],
            });
        }
        for (slot, ((name, p), g)) in params.iter().zip(grads).enumerate() {
            let grad_len = match updates[slot] {
                Update::Gathered(idx) => {
                    if idx.iter().any(|&i| i >= p.len()) {
                        return Err(Error::ShapeMismatch {
                            op: "adam_step",
                            shapes: vec![p.shape().to_vec(), vec![idx.len()]],
                        });
                    }
                    idx.len()
                }
                _ => p.len(),
            };
            if grad_len != g.len() || p.len() != self.first[slot].len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    shapes: vec![p.shape().to_vec(), vec![g.len()]],
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        for (slot, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[slot];
            let v = &mut self.second[slot];
            let data = p.data_mut();
            let n = data.len();
            let mut apply = |i: usize, g: f64| {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            };
            match updates[slot] {
                Update::Dense => (0..n).for_each(|i| apply(i, g[i])),
                Update::Elements(idx) => idx.iter().for_each(|&i| apply(i, g[i])),
                Update::Gathered(idx) => {
                    idx.iter().zip(g.iter()).for_each(|(&i, &gi)| apply(i, gi))
                }
            }
        }
        Ok(())
    }
}
