//! Rectified Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RAdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        RAdamConfig { learning_rate: 1e-4, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct RAdam {
    pub config: RAdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl RAdam {
    pub fn new(config: RAdamConfig) -> Self {
        RAdam { config, step_count: 0, first_moment: Vec::new(), second_moment: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Updates every parameter from its `.grad` (absent grads count as zero).
    ///
    /// All gradients are validated before any parameter is touched.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        for p in params.iter() {
            if p.tensor.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != params.len() {
            return Err(Error::Config("optimizer state does not match the parameter set".into()));
        }

        self.step_count += 1;
        let RAdamConfig { learning_rate: lr, weight_decay: wd, beta1: b1, beta2: b2, epsilon: eps } = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - b1.powi(t);
        let b2t = b2.powi(t);
        let bias2 = 1.0 - b2t;
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let rho_t = rho_inf - 2.0 * t as f64 * b2t / bias2;
        // variance of the adaptive step is tractable only once rho_t > 5
        let rect = (rho_t > 5.0).then(|| {
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
        });

        for ((p, m), v) in params.iter_mut().zip(&mut self.first_moment).zip(&mut self.second_moment) {
            if m.len() != p.tensor.len() {
                return Err(Error::Config(format!("optimizer state shape mismatch for `{}`", p.name)));
            }
            let grad = p.tensor.grad().map(<[f64]>::to_vec);
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                if wd != 0.0 {
                    data[i] *= 1.0 - lr * wd;
                }
                let m_hat = m[i] / bias1;
                let update = match rect {
                    Some(r) => r * m_hat / ((v[i] / bias2).sqrt() + eps),
                    None => m_hat,
                };
                data[i] -= lr * update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w)).unwrap();
        s
    }

    #[test]
    fn defaults_match_training_setup() {
        let c = RAdamConfig::default();
        assert_eq!((c.learning_rate, c.weight_decay), (1e-4, 1e-4));
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::vector(vec![1.0, -2.0, 3.5]).unwrap()).unwrap();
        let before = s.clone();
        let mut opt = RAdam::new(RAdamConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..20 {
            s.zero_grad();
            let id = s.id("a").unwrap();
            s.get_mut(id).accumulate_grad(&[0.0; 3]).unwrap();
            opt.step(&mut s).unwrap();
        }
        let id = s.id("a").unwrap();
        assert_eq!(s.get(id).data(), before.get(id).data());
        assert_eq!(opt.step_count(), 20);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut s = single(0.0);
        let mut opt = RAdam::new(RAdamConfig { learning_rate: 1e-2, ..Default::default() });
        let id = s.id("w").unwrap();
        for _ in 0..2000 {
            s.zero_grad();
            let w = s.get(id).data()[0];
            s.get_mut(id).accumulate_grad(&[2.0 * (w - 3.0)]).unwrap();
            opt.step(&mut s).unwrap();
        }
        let w = s.get(id).data()[0];
        assert!((w - 3.0).abs() < 1e-2, "w = {w}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = single(1.0);
        let id = s.id("w").unwrap();
        s.get_mut(id).accumulate_grad(&[f64::NAN]).unwrap();
        let err = RAdam::new(RAdamConfig::default()).step(&mut s).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(s.get(id).data()[0], 1.0);
    }
}
