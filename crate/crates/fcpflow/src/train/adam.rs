//! Adaptive-moment optimizer with global-norm gradient clipping.

use crate::array::Array2;
use crate::error::{Error, Result};

/// First/second moment accumulators mirroring the parameter shapes.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<Array2>,
    v: Vec<Array2>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: &[&Array2]) -> Self {
        OptimizerState {
            m: params.iter().map(|p| Array2::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.rows(), p.cols())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Array2], max_norm: f64) -> f64 {
    let norm: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// One bias-corrected adaptive-moment update. Gradients are checked finite
/// before clipping, then clipped to `clip_norm`, then applied.
pub fn optimizer_step(
    params: &mut [&mut Array2],
    grads: &[Array2],
    state: &mut OptimizerState,
    lr: f64,
    clip_norm: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "optimizer saw {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Contract(format!(
                "gradient shape {:?} does not match parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite { context: "gradient (pre-clip)".to_string() });
        }
    }
    let mut grads = grads.to_vec();
    clip_global_norm(&mut grads, clip_norm);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(&grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for k in 0..g.len() {
            let gk = g.data()[k];
            let mk = state.beta1 * m.data()[k] + (1.0 - state.beta1) * gk;
            let vk = state.beta2 * v.data()[k] + (1.0 - state.beta2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            let m_hat = mk / bc1;
            let v_hat = vk / bc2;
            p.data_mut()[k] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_gradient_decreases_parameter_monotonically() {
        let mut p = Array2::filled(1, 1, 5.0);
        let g = Array2::filled(1, 1, 1.0);
        let mut state = OptimizerState::new(&[&p]);
        let mut last = 5.0;
        for _ in 0..20 {
            optimizer_step(&mut [&mut p], &[g.clone()], &mut state, 0.1, 10.0).unwrap();
            assert!(p.get(0, 0) < last);
            last = p.get(0, 0);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Array2::filled(2, 2, 3.0);
        let g = Array2::zeros(2, 2);
        let mut state = OptimizerState::new(&[&p]);
        optimizer_step(&mut [&mut p], &[g], &mut state, 0.1, 10.0).unwrap();
        assert_eq!(p, Array2::filled(2, 2, 3.0));
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut grads = vec![Array2::filled(1, 4, 3.0), Array2::filled(1, 4, 4.0)];
        // Global norm = sqrt(4*9 + 4*16) = 10.
        let pre = clip_global_norm(&mut grads, 5.0);
        assert!((pre - 10.0).abs() < 1e-12);
        let post: f64 = grads
            .iter()
            .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!((post - 5.0).abs() < 1e-12);

        // Under the threshold: untouched.
        let mut grads = vec![Array2::filled(1, 1, 2.0)];
        let pre = clip_global_norm(&mut grads, 5.0);
        assert!((pre - 2.0).abs() < 1e-12);
        assert_eq!(grads[0].get(0, 0), 2.0);
    }

    #[test]
    fn nan_gradient_is_detected_before_clip() {
        let mut p = Array2::filled(1, 1, 1.0);
        let g = Array2::filled(1, 1, f64::NAN);
        let mut state = OptimizerState::new(&[&p]);
        let r = optimizer_step(&mut [&mut p], &[g], &mut state, 0.1, 10.0);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
