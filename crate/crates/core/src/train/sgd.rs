//! SGD with Nesterov momentum and coupled weight decay.
//!
//! The decay term enters the gradient (`g += wd * p`) before the momentum
//! update `v = mu v + g; p -= lr (g + mu v)`. Attention masks and biases
//! are registered as decay-exempt and are skipped by the decay term.

use crate::config::OptimConfig;
use crate::error::{Error, Result};
use crate::model::params::{ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(params: &ParamStore) -> Self {
        SgdState {
            velocity: params
                .iter()
                .map(|(_, e)| vec![0.0; e.tensor.numel()])
                .collect(),
        }
    }

    /// One optimizer step over every parameter's accumulated gradient.
    /// Aborts on non-finite gradients, naming the parameter.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64, cfg: &OptimConfig) -> Result<()> {
        let mu = cfg.momentum;
        for i in 0..params.len() {
            let id = ParamId(i);
            let decay = params.entry(id).decay;
            let name = params.entry(id).name.clone();
            let entry = params.entry_mut(id);
            let numel = entry.tensor.numel();
            let grad: Vec<f64> = match entry.tensor.grad() {
                Some(g) => g.to_vec(),
                None => vec![0.0; numel],
            };
            let data = entry.tensor.data_mut();
            let velocity = &mut self.velocity[i];
            for j in 0..numel {
                let mut g = grad[j];
                if !g.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient {g} in parameter {name:?} at entry {j}"
                    )));
                }
                if decay && cfg.weight_decay != 0.0 {
                    g += cfg.weight_decay * data[j];
                }
                velocity[j] = mu * velocity[j] + g;
                data[j] -= lr * (g + mu * velocity[j]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![1], vec![value]).unwrap(), true).unwrap();
        s.entry_mut(ParamId(0)).tensor.accumulate_grad(&[grad]).unwrap();
        s
    }

    #[test]
    fn plain_step_is_exactly_minus_lr_grad() {
        let mut cfg = OptimConfig::default();
        cfg.momentum = 0.0;
        cfg.weight_decay = 0.0;
        let (p0, g, lr) = (0.7071067811865476_f64, 0.3141592653589793_f64, 0.0123_f64);
        let mut params = store_with(p0, g);
        let mut state = SgdState::new(&params);
        state.step(&mut params, lr, &cfg).unwrap();
        let expect = p0 - lr * g;
        assert_eq!(params.entry(ParamId(0)).tensor.data()[0].to_bits(), expect.to_bits());
    }

    #[test]
    fn nesterov_velocity_reaches_1_9g_at_step_two() {
        // constant gradient g, mu = 0.9: v1 = g, v2 = 1.9 g
        let mut cfg = OptimConfig::default();
        cfg.momentum = 0.9;
        cfg.weight_decay = 0.0;
        let g = 0.25;
        let mut params = store_with(1.0, g);
        let mut state = SgdState::new(&params);
        state.step(&mut params, 0.01, &cfg).unwrap();
        assert!((state.velocity[0][0] - g).abs() < 1e-15);
        params.zero_grads();
        params.entry_mut(ParamId(0)).tensor.accumulate_grad(&[g]).unwrap();
        state.step(&mut params, 0.01, &cfg).unwrap();
        assert!((state.velocity[0][0] - 1.9 * g).abs() < 1e-15);
    }

    #[test]
    fn decay_only_shrinks_by_expected_factor() {
        // zero gradient: first step multiplies the weight by
        // 1 - lr * wd * (1 + mu)
        let mut cfg = OptimConfig::default();
        cfg.momentum = 0.9;
        cfg.weight_decay = 0.01;
        let (p0, lr) = (2.0, 0.1);
        let mut params = ParamStore::new();
        params.add("w", Tensor::new(vec![1], vec![p0]).unwrap(), true).unwrap();
        let mut state = SgdState::new(&params);
        state.step(&mut params, lr, &cfg).unwrap();
        let expect = p0 * (1.0 - lr * cfg.weight_decay * (1.0 + cfg.momentum));
        let got = params.entry(ParamId(0)).tensor.data()[0];
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn decay_exempt_parameters_do_not_shrink() {
        let mut cfg = OptimConfig::default();
        cfg.momentum = 0.0;
        let mut params = ParamStore::new();
        params.add("mask", Tensor::full(vec![2], 1.0), false).unwrap();
        let mut state = SgdState::new(&params);
        state.step(&mut params, 0.1, &cfg).unwrap();
        assert_eq!(params.entry(ParamId(0)).tensor.data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let cfg = OptimConfig::default();
        let mut params = store_with(1.0, f64::NAN);
        let mut state = SgdState::new(&params);
        let err = state.step(&mut params, 0.1, &cfg).unwrap_err().to_string();
        assert!(err.contains("\"w\""), "{err}");
    }
}
