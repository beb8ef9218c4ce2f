//! Adam, gradient clipping and the step learning-rate schedule.

use super::{TrainConfig, TrainError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub adam: AdamConfig,
    names: Vec<String>,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
    pub lr: f64,
}

impl OptimizerState {
    /// Zero moments for the given `(name, tensor)` parameters.
    pub fn new<'a>(params: impl IntoIterator<Item = (String, &'a Tensor)>, adam: AdamConfig) -> Self {
        let mut names = Vec::new();
        let mut first = Vec::new();
        for (n, t) in params {
            names.push(n);
            first.push(vec![0.0; t.len()]);
        }
        OptimizerState {
            adam,
            names,
            second: first.clone(),
            first,
            step: 0,
            lr: 0.0,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One bias-corrected Adam update with coupled L2 decay (`g + wd * theta`).
pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut [&mut Tensor],
    grads: &[Vec<f64>],
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    if params.len() != state.first.len() || grads.len() != params.len() {
        return Err(TrainError::Invalid(format!(
            "optimizer tracks {} parameters, got {} tensors and {} gradients",
            state.first.len(),
            params.len(),
            grads.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.len() != params[i].len() {
            return Err(TrainError::Invalid(format!("gradient length mismatch for `{}`", state.names[i])));
        }
        if let Some(index) = g.iter().position(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                param: state.names[i].clone(),
                index,
            });
        }
    }
    let AdamConfig { beta1, beta2, eps } = state.adam;
    state.step += 1;
    state.lr = lr;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, param) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (j, theta) in param.data_mut().iter_mut().enumerate() {
            let g = grads[i][j] + weight_decay * *theta;
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Global L2 norm over every gradient entry.
pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales all gradients when their global norm exceeds `threshold`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Vec<f64>], threshold: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > threshold {
        let s = threshold / norm;
        for g in grads.iter_mut().flatten() {
            *g *= s;
        }
    }
    norm
}

/// `base_lr / factor^(epoch / every)`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let drops = (epoch / config.lr_decay_every.max(1)) as i32;
    config.base_lr * config.lr_decay_factor.powi(-drops)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state(x: f64) -> (OptimizerState, Tensor) {
        let t = Tensor::scalar(x);
        (OptimizerState::new([("x".to_string(), &t)], AdamConfig::default()), t)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, mut x) = scalar_state(1.0);
        adam_step(&mut s, &mut [&mut x], &[vec![0.3]], 1e-3, 0.0).unwrap();
        let expected = 1.0 - 1e-3 * 0.3 / (0.3 + 1e-8);
        assert!((x.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let (mut s, mut x) = scalar_state(0.7);
        for _ in 0..3 {
            adam_step(&mut s, &mut [&mut x], &[vec![0.0]], 1e-3, 0.0).unwrap();
        }
        assert_eq!(x.item(), 0.7);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut s, mut x) = scalar_state(0.0);
        let err = adam_step(&mut s, &mut [&mut x], &[vec![f64::NAN]], 1e-3, 0.0).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGradient { ref param, index: 0 } if param == "x"));
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0], vec![0.0]];
        assert_eq!(clip_gradients(&mut g, 5.0), 3.0);
        assert_eq!(g[0][0], 3.0);
        let mut g = vec![vec![-50.0]];
        clip_gradients(&mut g, 5.0);
        assert!((g[0][0] + 5.0).abs() < 1e-12);
    }

    #[test]
    fn schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 1e-3);
        assert!((lr_at(10, &c) - 1e-4).abs() < 1e-18);
        assert!((lr_at(29, &c) - 1e-5).abs() < 1e-18);
    }
}
