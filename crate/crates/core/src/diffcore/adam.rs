//! Adam optimizer with bias correction.

use crate::error::{LpsError, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One bias-corrected Adam step, descending on the supplied gradient.
/// Trainers that maximize an objective feed the gradient of its negation.
///
/// `group` names the parameter block so a NaN gradient is reported usefully.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    group: &str,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(LpsError::Usage(format!(
            "adam_step shape mismatch for group '{group}'"
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(LpsError::train(format!(
            "non-finite gradient in parameter group '{group}'"
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_signed_lr() {
        // At t=1 bias correction gives m̂=g, v̂=g², so Δ ≈ −lr·sign(g).
        let mut p = vec![0.5];
        let mut st = AdamState::new(1, 1e-3);
        adam_step(&mut p, &[1.0], &mut st, "w").unwrap();
        assert!((p[0] - (0.5 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.25, -1.0];
        let mut st = AdamState::new(2, 1e-2);
        adam_step(&mut p, &[0.0, 0.0], &mut st, "w").unwrap();
        assert_eq!(p, vec![0.25, -1.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut p = vec![1.0, 2.0];
            let mut st = AdamState::new(2, 1e-3);
            for k in 0..10 {
                let g = [0.1 * (k as f64 + 1.0), -0.3];
                adam_step(&mut p, &g, &mut st, "w").unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nan_gradient_names_group() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(1, 1e-3);
        let err = adam_step(&mut p, &[f64::NAN], &mut st, "theta_q").unwrap_err();
        assert!(err.to_string().contains("theta_q"));
    }
}
