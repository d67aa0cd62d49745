use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Trainable tensor with its gradient and adaptive-moment state.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            grad: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn reset_moments(&mut self) {
        self.first_moment.data_mut().fill(0.0);
        self.second_moment.data_mut().fill(0.0);
    }
}

/// Adaptive-moment optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied to rank-2 weights only.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One bias-corrected adaptive-moment update at step `t` (1-based).
///
/// Gradients are read from each parameter's `grad`. Every gradient is checked
/// before any parameter changes, so a failure leaves the state untouched.
pub fn adam_step(params: &mut [Parameter], hyper: &AdamConfig, lr: f64, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::Parameter("adam step index starts at 1".into()));
    }
    for (i, p) in params.iter().enumerate() {
        if let Some(j) = p.grad.data().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {i} (shape {:?}) at element {j} is {}",
                p.grad.shape(),
                p.grad.data()[j]
            )));
        }
    }
    let b1 = hyper.beta1 as f32;
    let b2 = hyper.beta2 as f32;
    let bc1 = (1.0 - hyper.beta1.powi(t as i32)) as f32;
    let bc2 = (1.0 - hyper.beta2.powi(t as i32)) as f32;
    let lr32 = lr as f32;
    let eps = hyper.eps as f32;
    let decay = (lr * hyper.weight_decay) as f32;
    for p in params.iter_mut() {
        let apply_decay = decay != 0.0 && p.value.shape().len() == 2;
        let Parameter {
            value,
            grad,
            first_moment,
            second_moment,
        } = p;
        let it = value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(first_moment.data_mut().iter_mut())
            .zip(second_moment.data_mut().iter_mut());
        for (((w, &g), m), v) in it {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            if apply_decay {
                *w -= decay * *w;
            }
            *w -= lr32 * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping. The norm is accumulated in `f64` in
/// parameter order.
pub fn clip_grad_norm(params: &mut [Parameter], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for p in params.iter() {
        for &g in p.grad.data() {
            sq += (g as f64) * (g as f64);
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = (max_norm / norm) as f32;
        for p in params.iter_mut() {
            for g in p.grad.data_mut() {
                *g *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f32], grads: &[f32]) -> Parameter {
        let mut p = Parameter::new(Tensor::new(vec![values.len()], values.to_vec()).unwrap());
        p.grad = Tensor::new(vec![grads.len()], grads.to_vec()).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let hyper = AdamConfig {
            eps: 0.0,
            ..AdamConfig::default()
        };
        let mut ps = vec![param(&[1.0, 1.0, 1.0], &[0.3, -2.0, 1e-3])];
        adam_step(&mut ps, &hyper, 0.01, 1).unwrap();
        let got = ps[0].value.data();
        assert!((got[0] - 0.99).abs() < 1e-6);
        assert!((got[1] - 1.01).abs() < 1e-6);
        assert!((got[2] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut ps = vec![param(&[0.5, -0.25], &[0.0, 0.0])];
        let before = ps[0].value.clone();
        for t in 1..=5 {
            adam_step(&mut ps, &AdamConfig::default(), 0.1, t).unwrap();
        }
        assert_eq!(ps[0].value, before);
    }

    #[test]
    fn identical_states_step_identically() {
        let mut a = vec![param(&[0.1, 0.2, 0.3], &[0.5, -0.5, 0.25])];
        let mut b = a.clone();
        adam_step(&mut a, &AdamConfig::default(), 1e-3, 3).unwrap();
        adam_step(&mut b, &AdamConfig::default(), 1e-3, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_aborts_without_changes() {
        let mut ps = vec![param(&[1.0], &[0.5]), param(&[2.0], &[f32::NAN])];
        let before = ps.clone();
        let err = adam_step(&mut ps, &AdamConfig::default(), 0.1, 1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        for (a, b) in ps.iter().zip(&before) {
            assert_eq!(a.value, b.value);
            assert_eq!(a.first_moment, b.first_moment);
            assert_eq!(a.second_moment, b.second_moment);
        }
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut ps = vec![param(&[0.0, 0.0], &[3.0, 4.0])];
        let n = clip_grad_norm(&mut ps, 1.0);
        assert!((n - 5.0).abs() < 1e-12);
        assert!((ps[0].grad.data()[0] - 0.6).abs() < 1e-6);
        assert!((ps[0].grad.data()[1] - 0.8).abs() < 1e-6);
    }
}
