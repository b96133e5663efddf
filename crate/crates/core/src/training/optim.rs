use crate::encoder::ParamStore;
use crate::error::{Error, Result};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update; `grads[i]` belongs to the i-th parameter array.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape("adamw", "one gradient per parameter array expected"));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let g = &grads[i];
            if g.len() != p.len() || self.m[i].len() != p.len() {
                return Err(Error::shape("adamw", "gradient does not match its parameter"));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = *w * decay - self.lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                if !update.is_finite() {
                    return Err(Error::Divergence(format!("non-finite update in parameter array {i}")));
                }
                *w = update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.push("w", Tensor::vector(vec![v]).unwrap());
        p
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = scalar_store(0.7);
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut p, &[vec![0.0]]).unwrap();
        assert_eq!(p.tensor(0).data(), &[0.7]);
    }

    #[test]
    fn zero_gradient_with_decay_is_multiplicative() {
        let mut p = scalar_store(2.0);
        let mut opt = AdamW::new(0.1, 0.01);
        opt.step(&mut p, &[vec![0.0]]).unwrap();
        assert_eq!(p.tensor(0).data(), &[2.0 * (1.0 - 0.1 * 0.01)]);
    }

    #[test]
    fn constant_gradient_trajectory() {
        // hand-traced with 40-digit arithmetic, θ₀ = 1, g = 1, lr = 0.1
        let cases = [
            (0.0, [0.900_000_000_999_999_99, 0.800_000_001_999_999_98, 0.700_000_002_999_999_97]),
            (0.01, [0.899_000_000_999_999_99, 0.798_101_001_998_999_98, 0.697_302_901_997_000_97]),
        ];
        for (gamma, want) in cases {
            let mut p = scalar_store(1.0);
            let mut opt = AdamW::new(0.1, gamma);
            for w in want {
                opt.step(&mut p, &[vec![1.0]]).unwrap();
                assert!((p.tensor(0).data()[0] - w).abs() < 1e-12, "γ={gamma}");
            }
        }
    }

    #[test]
    fn rejects_mismatched_gradients() {
        let mut p = scalar_store(1.0);
        let mut opt = AdamW::new(0.1, 0.0);
        assert!(opt.step(&mut p, &[vec![1.0, 2.0]]).is_err());
        assert!(opt.step(&mut p, &[]).is_err());
    }
}
