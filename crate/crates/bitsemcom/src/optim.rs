//! Adam optimizer with bias correction and a step learning-rate schedule.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_sizes: &[usize], learning_rate: f64) -> Self {
        AdamState {
            first_moment: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over `params`; every parameter must hold a gradient.
/// Gradients are zeroed after the update.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.first_moment.len() {
        return Err(Error::invalid(format!(
            "optimizer state tracks {} parameters, got {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        match p.grad() {
            Some(g) if g.len() == p.numel() => {}
            _ => return Err(Error::MissingGradient(format!("param[{i}]"))),
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad().unwrap().to_vec();
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        let values = p.values_mut();
        for j in 0..grad.len() {
            let g = grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            values[j] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
        p.zero_grad();
    }
    Ok(())
}

/// Step-decay schedule: `initial * factor^(epoch / interval)`.
pub fn scheduled_lr(initial: f64, factor: f64, interval_epochs: usize, epoch: usize) -> f64 {
    initial * factor.powi((epoch / interval_epochs.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: Vec<f64>) -> Tensor {
        Tensor::param(vec![values.len()], values).unwrap()
    }

    fn step(params: &mut [Tensor], state: &mut AdamState) -> Result<()> {
        let mut refs: Vec<&mut Tensor> = params.iter_mut().collect();
        adam_step(&mut refs, state)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![param(vec![1.5, -0.5])];
        params[0].accumulate_grad(&[0.0, 0.0]).unwrap();
        let before = params[0].values().to_vec();
        let mut state = AdamState::new(&[2], 1e-3);
        step(&mut params, &mut state).unwrap();
        assert_eq!(params[0].values(), &before[..]);
    }

    #[test]
    fn missing_gradient_is_rejected() {
        // a tensor constructed without any grad buffer must be rejected
        let mut fresh = vec![Tensor::new(vec![1], vec![0.0]).unwrap()];
        let mut state = AdamState::new(&[1], 1e-3);
        assert!(matches!(
            step(&mut fresh, &mut state),
            Err(Error::MissingGradient(_))
        ));
    }

    #[test]
    fn step_counter_increments_once_per_call() {
        let mut params = vec![param(vec![0.0])];
        let mut state = AdamState::new(&[1], 1e-3);
        for k in 1..=5u64 {
            params[0].accumulate_grad(&[0.3]).unwrap();
            step(&mut params, &mut state).unwrap();
            assert_eq!(state.step_count(), k);
        }
    }

    #[test]
    fn constant_gradient_update_magnitude_approaches_learning_rate() {
        // with constant gradient the bias-corrected moments equal g and g^2,
        // so each update has magnitude lr * |g| / (|g| + eps) ~= lr
        let lr = 1e-2;
        let g = 0.5;
        let mut params = vec![param(vec![10.0])];
        let mut state = AdamState::new(&[1], lr);
        let mut prev = params[0].values()[0];
        for k in 0..1000 {
            params[0].accumulate_grad(&[g]).unwrap();
            step(&mut params, &mut state).unwrap();
            let now = params[0].values()[0];
            let magnitude = (prev - now).abs();
            assert!(
                (magnitude - lr).abs() < 1e-6 * lr.max(magnitude),
                "step {k}: update magnitude {magnitude} vs lr {lr}"
            );
            prev = now;
        }
    }

    #[test]
    fn grads_are_zeroed_after_update() {
        let mut params = vec![param(vec![1.0])];
        let mut state = AdamState::new(&[1], 1e-3);
        params[0].accumulate_grad(&[2.0]).unwrap();
        step(&mut params, &mut state).unwrap();
        assert_eq!(params[0].grad().unwrap(), &[0.0]);
    }

    #[test]
    fn schedule_decays_stepwise() {
        assert_eq!(scheduled_lr(1e-4, 0.9, 20, 0), 1e-4);
        assert_eq!(scheduled_lr(1e-4, 0.9, 20, 19), 1e-4);
        assert!((scheduled_lr(1e-4, 0.9, 20, 20) - 9e-5).abs() < 1e-12);
        assert!((scheduled_lr(1e-4, 0.9, 20, 45) - 8.1e-5).abs() < 1e-12);
    }
}
