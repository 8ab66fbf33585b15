use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::mlp::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm bound applied to the full gradient before each update.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 100.0,
        }
    }
}

/// Optimizer state: step counter and first/second moments per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: BTreeMap<String, Matrix>,
    pub second: BTreeMap<String, Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = |p: &ParamStore| {
            p.iter()
                .map(|(k, v)| (k.clone(), Matrix::zeros(v.rows(), v.cols())))
                .collect::<BTreeMap<_, _>>()
        };
        Self {
            config,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    /// Clip `grads` to the configured global norm, then apply one bias-corrected
    /// Adam update. Parameters without a gradient entry get a zero gradient.
    /// Returns the pre-clipping global gradient norm.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Matrix>) -> Result<f64> {
        let mut sq = 0.0;
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::validation(format!("gradient for unknown parameter '{name}'")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape(format!("gradient for '{name}' has the wrong shape")));
            }
            if !g.all_finite() {
                return Err(Error::Numerical(format!("non-finite gradient for parameter '{name}'")));
            }
            sq += g.sq_norm();
        }
        let norm = sq.sqrt();
        let clip = if norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let m = self.first.get_mut(name).expect("moments track parameters");
            let v = self.second.get_mut(name).expect("moments track parameters");
            let g = grads.get(name);
            for k in 0..p.len() {
                let gk = g.map_or(0.0, |g| g.data()[k] * clip);
                let mk = &mut m.data_mut()[k];
                *mk = beta1 * *mk + (1.0 - beta1) * gk;
                let vk = &mut v.data_mut()[k];
                *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                let m_hat = m.data()[k] / bc1;
                let v_hat = v.data()[k] / bc2;
                p.data_mut()[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Matrix::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = scalar_store(1.25);
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let grads = BTreeMap::from([("p".to_string(), Matrix::scalar(0.0))]);
        adam.step(&mut params, &grads).unwrap();
        assert_eq!(params.get("p").unwrap().item(), 1.25);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², update = lr · g / (|g| + ε)
        let mut params = scalar_store(0.0);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut adam = AdamState::new(cfg, &params);
        let grads = BTreeMap::from([("p".to_string(), Matrix::scalar(1.0))]);
        adam.step(&mut params, &grads).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((params.get("p").unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn clipping_halves_large_gradient() {
        let mut params = ParamStore::new();
        params.insert("w", Matrix::row_vector(vec![0.0, 0.0]));
        let cfg = AdamConfig { lr: 0.1, clip_norm: 100.0, ..AdamConfig::default() };
        let mut adam = AdamState::new(cfg, &params);
        // norm 200
        let grads = BTreeMap::from([("w".to_string(), Matrix::row_vector(vec![120.0, 160.0]))]);
        let norm = adam.step(&mut params, &grads).unwrap();
        assert!((norm - 200.0).abs() < 1e-12);
        // first moment holds (1-β1)·clipped gradient
        let m = &adam.first["w"];
        assert!((m.data()[0] - 0.1 * 60.0).abs() < 1e-12);
        assert!((m.data()[1] - 0.1 * 80.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut params = scalar_store(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let grads = BTreeMap::from([("p".to_string(), Matrix::scalar(f64::NAN))]);
        let err = adam.step(&mut params, &grads).unwrap_err().to_string();
        assert!(err.contains("'p'"), "{err}");
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut params = scalar_store(0.3);
            let mut adam = AdamState::new(AdamConfig::default(), &params);
            for k in 0..10 {
                let grads = BTreeMap::from([("p".to_string(), Matrix::scalar((k as f64).sin()))]);
                adam.step(&mut params, &grads).unwrap();
            }
            params.get("p").unwrap().item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
