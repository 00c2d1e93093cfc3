//! Adam with per-parameter-family learning rates over the flat splat layout.

use serde::{Deserialize, Serialize};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub stride: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(splats: usize, stride: usize) -> Self {
        Self {
            stride,
            m: vec![0.0; splats * stride],
            v: vec![0.0; splats * stride],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len() / self.stride.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update; `lr` holds a learning rate per offset within a splat.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: &[f64]) {
        assert_eq!(lr.len(), self.stride);
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2_sqrt = (1.0 - ADAM_BETA2.powi(t)).sqrt();
        for (i, ((p, &g), (m, v))) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .enumerate()
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let rate = lr[i % self.stride];
            if rate != 0.0 {
                *p -= rate / bc1 * *m / (v.sqrt() / bc2_sqrt + ADAM_EPS);
            }
        }
    }

    /// Rebuilds the moments after the splat list changed; `origin[i]` names the
    /// old splat whose moments carry over to new splat `i`, `None` starts fresh.
    pub fn remap(&mut self, origin: &[Option<usize>]) {
        let s = self.stride;
        let mut m = vec![0.0; origin.len() * s];
        let mut v = vec![0.0; origin.len() * s];
        for (i, o) in origin.iter().enumerate() {
            if let Some(j) = *o {
                m[i * s..(i + 1) * s].copy_from_slice(&self.m[j * s..(j + 1) * s]);
                v[i * s..(i + 1) * s].copy_from_slice(&self.v[j * s..(j + 1) * s]);
            }
        }
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(1, 2);
        let mut p = vec![1.0, 1.0];
        adam.update(&mut p, &[0.5, -2.0], &[0.1, 0.01]);
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] - 1.01).abs() < 1e-12);
    }

    #[test]
    fn zero_rate_leaves_parameters() {
        let mut adam = Adam::new(2, 3);
        let mut p = vec![0.3; 6];
        adam.update(&mut p, &[1.0; 6], &[0.0; 3]);
        assert_eq!(p, vec![0.3; 6]);
    }

    #[test]
    fn remap_keeps_survivors_and_zeroes_new() {
        let mut adam = Adam::new(3, 1);
        adam.m = vec![1.0, 2.0, 3.0];
        adam.v = vec![4.0, 5.0, 6.0];
        adam.remap(&[Some(2), Some(0), None]);
        assert_eq!(adam.m, vec![3.0, 1.0, 0.0]);
        assert_eq!(adam.v, vec![6.0, 4.0, 0.0]);
    }
}
