//! Adam over a set of parameter slices treated as one flat vector.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// One bias-corrected Adam update. `grads` is laid out as the
    /// concatenation of `params`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.iter().map(|p| p.len()).sum::<usize>(), grads.len());
        self.steps += 1;
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(self.steps));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(self.steps));
        let mut k = 0;
        for slice in params.iter_mut() {
            for p in slice.iter_mut() {
                let g = grads[k];
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[k] / c1;
                let v_hat = self.v[k] / c2;
                *p -= lr * m_hat / (libm::sqrt(v_hat) + self.epsilon);
                k += 1;
            }
        }
    }
}
