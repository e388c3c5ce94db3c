//! AdamW and the constant-then-cosine learning rate schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment buffers plus the step counter, aligned with the
/// parameter list they were created for.
#[derive(Clone, Debug, Default)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(param_lens: &[usize]) -> Self {
        AdamWState {
            step: 0,
            m: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One AdamW update over a list of parameter buffers.
///
/// Weight decay is decoupled: `p -= lr * wd * p` happens separately from the
/// bias-corrected adaptive step.
pub fn adamw_step(
    params: &mut [Vec<f64>],
    grads: &[Vec<f64>],
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Param {
            what: "adamw buffers",
            detail: format!(
                "params {} / grads {} / state {} length mismatch",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - math::powi(cfg.beta1, t);
    let bc2 = 1.0 - math::powi(cfg.beta2, t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::ShapeMismatch {
                op: "adamw_step",
                lhs: vec![p.len()],
                rhs: vec![g.len()],
            });
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.lr * cfg.weight_decay * p[j];
            p[j] -= cfg.lr * m_hat / (math::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}

/// Constant `base_lr` for the first `warm_fraction` of training, then a
/// cosine anneal to exactly zero at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64, warm_fraction: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Param {
            what: "total_steps",
            detail: format!("must be positive"),
        });
    }
    let boundary = warm_fraction * total_steps as f64;
    let s = step as f64;
    if s < boundary {
        return Ok(base_lr);
    }
    let u = ((s - boundary) / (total_steps as f64 - boundary)).min(1.0);
    Ok(base_lr * 0.5 * (1.0 + math::cos(math::PI * u)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_no_decay_leaves_params_unchanged() {
        let mut params = vec![vec![1.0, -2.0, 3.0]];
        let grads = vec![vec![0.0; 3]];
        let mut state = AdamWState::new(&[3]);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();
        assert_eq!(params[0], vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn zero_grad_with_decay_shrinks_multiplicatively() {
        let mut params = vec![vec![1.0, -2.0]];
        let grads = vec![vec![0.0; 2]];
        let mut state = AdamWState::new(&[2]);
        let cfg = AdamWConfig::default();
        adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();
        let shrink = 1.0 - cfg.lr * cfg.weight_decay;
        assert!((params[0][0] - shrink).abs() < 1e-15);
        assert!((params[0][1] + 2.0 * shrink).abs() < 1e-15);
    }

    #[test]
    fn matches_scalar_simulation_on_quadratic() {
        // f(w) = w^2, grad = 2w, from w = 1 at lr = 1e-2. The independent
        // scalar simulation of bias-corrected Adam gives w = 0.22444604523...
        // after 100 steps and drops below 1e-2 by step 250.
        let mut params = vec![vec![1.0]];
        let mut state = AdamWState::new(&[1]);
        let cfg = AdamWConfig {
            lr: 1e-2,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        // simulation oracle, written independently of adamw_step
        let mut w = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for step in 1..=250u32 {
            let grads = vec![vec![2.0 * params[0][0]]];
            adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();

            let g = 2.0 * w;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(step as i32));
            let vh = v / (1.0 - 0.999f64.powi(step as i32));
            w -= cfg.lr * mh / (vh.sqrt() + cfg.eps);

            assert!(
                (params[0][0] - w).abs() < 1e-9,
                "step {step}: impl {} vs oracle {w}",
                params[0][0]
            );
            if step == 100 {
                assert!((params[0][0] - 0.224446045).abs() < 1e-6);
            }
        }
        assert!(params[0][0].abs() < 1e-2, "w = {}", params[0][0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![vec![1.0, 2.0]];
        let grads = vec![vec![1.0]];
        let mut state = AdamWState::new(&[2]);
        assert!(adamw_step(&mut params, &grads, &mut state, &AdamWConfig::default()).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let base = 1e-3;
        assert_eq!(cosine_lr(0, 1000, base, 0.75).unwrap(), base);
        // boundary continuity
        assert!((cosine_lr(750, 1000, base, 0.75).unwrap() - base).abs() < 1e-12);
        assert!(cosine_lr(1000, 1000, base, 0.75).unwrap().abs() < 1e-12);
        // midpoint of the anneal is half the base lr
        assert!((cosine_lr(875, 1000, base, 0.75).unwrap() - base / 2.0).abs() < 1e-12);
        assert!(cosine_lr(1, 0, base, 0.75).is_err());
    }
}
