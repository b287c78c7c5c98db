//! AdamW with decoupled weight decay, per-slot decay masking and a global
//! gradient-norm clip.

use crate::error::{Error, Result};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grad_clip: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamWState {
    pub fn new(n: usize) -> Self {
        AdamWState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One optimizer step. `decay_mask[i] = false` exempts a slot from weight
/// decay (variational mean/covariance and the noise parameter);
/// `lr_scale[i]` applies the optional per-slot learning-rate multiplier.
/// A non-finite gradient aborts the step without touching parameters.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamWState,
    cfg: &AdamWConfig,
    decay_mask: &[bool],
    lr_scale: &[f64],
) -> Result<f64> {
    let n = params.len();
    assert_eq!(grads.len(), n);
    assert_eq!(state.m.len(), n);
    let mut norm_sq = 0.0;
    for g in grads {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { group: "step" });
        }
        norm_sq += g * g;
    }
    let norm = norm_sq.sqrt();
    let clip = if cfg.grad_clip > 0.0 && norm > cfg.grad_clip { cfg.grad_clip / norm } else { 1.0 };
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..n {
        let g = grads[i] * clip;
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        let lr = cfg.learning_rate * lr_scale[i];
        let mut step = lr * mhat / (vhat.sqrt() + cfg.epsilon);
        if decay_mask[i] {
            step += lr * cfg.weight_decay * params[i];
        }
        params[i] -= step;
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_steps(g: &[f64], steps: usize, cfg: &AdamWConfig) -> Vec<f64> {
        let mut p = vec![1.0; g.len()];
        let mut st = AdamWState::new(g.len());
        let mask = vec![true; g.len()];
        let scale = vec![1.0; g.len()];
        for _ in 0..steps {
            adamw_step(&mut p, g, &mut st, cfg, &mask, &scale).unwrap();
        }
        p
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_params() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let p = run_steps(&[0.0, 0.0, 0.0], 5, &cfg);
        assert_eq!(p, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn first_step_is_signed_unit_times_lr() {
        let cfg = AdamWConfig { learning_rate: 0.01, grad_clip: 0.0, ..Default::default() };
        let g = [0.3, -4.0, 1e-3];
        let mut p = vec![0.0; 3];
        let mut st = AdamWState::new(3);
        adamw_step(&mut p, &g, &mut st, &cfg, &[true; 3], &[1.0; 3]).unwrap();
        for (pv, gv) in p.iter().zip(&g) {
            let want = -0.01 * gv / (gv.abs() + cfg.epsilon);
            assert!((pv - want).abs() < 1e-12, "{pv} vs {want}");
        }
    }

    /// With a constant gradient the bias-corrected update tends to
    /// −lr·sign(g) per step.
    #[test]
    fn constant_gradient_approaches_sign_update() {
        let cfg =
            AdamWConfig { learning_rate: 1e-3, grad_clip: 0.0, ..Default::default() };
        let g = [0.7, -0.2];
        let p_a = run_steps(&g, 400, &cfg);
        let p_b = run_steps(&g, 401, &cfg);
        for i in 0..2 {
            let delta = p_b[i] - p_a[i];
            let want = -1e-3 * g[i].signum();
            assert!((delta - want).abs() < 1e-5, "{delta} vs {want}");
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let cfg = AdamWConfig::default();
        let mut p = vec![1.0, 2.0];
        let mut st = AdamWState::new(2);
        let err = adamw_step(&mut p, &[f64::NAN, 0.0], &mut st, &cfg, &[true; 2], &[1.0; 2]);
        assert!(matches!(err, Err(Error::NonFiniteGradient { .. })));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn decay_mask_exempts_slots() {
        let cfg = AdamWConfig { weight_decay: 0.1, learning_rate: 0.01, ..Default::default() };
        let mut p = vec![1.0, 1.0];
        let mut st = AdamWState::new(2);
        adamw_step(&mut p, &[0.0, 0.0], &mut st, &cfg, &[true, false], &[1.0; 2]).unwrap();
        assert!(p[0] < 1.0);
        assert_eq!(p[1], 1.0);
    }
}
