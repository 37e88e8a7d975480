use crate::error::{Error, Result};

/// Bias-corrected Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update over a flat parameter vector.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) -> Result<()> {
        self.step_slices(&mut [params], &[grads], lr, weight_decay)
    }

    /// One update over parameters held in several slices; the slices are
    /// treated as a single vector in iteration order.
    pub fn step_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64, weight_decay: f64) -> Result<()> {
        let n_params: usize = params.iter().map(|p| p.len()).sum();
        let n_grads: usize = grads.iter().map(|g| g.len()).sum();
        if n_params != self.m.len() || n_grads != self.m.len() || params.len() != grads.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                got: n_params.max(n_grads),
            });
        }
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::numeric("adam", "non-finite gradient"));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (theta, &grad) in p.iter_mut().zip(g.iter()) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = b1 * *m + (1.0 - b1) * grad;
                *v = b2 * *v + (1.0 - b2) * grad * grad;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *theta);
                k += 1;
            }
        }
        Ok(())
    }
}
