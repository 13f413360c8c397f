//! Adam and AdamW over a [`ParamSet`].

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Decoupled decay (AdamW). When false the decay is added to the gradient (L2).
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.01,
            decoupled: true,
        }
    }
}

impl AdamConfig {
    pub fn adam() -> Self {
        AdamConfig {
            weight_decay: 0.0,
            decoupled: false,
            ..Self::default()
        }
    }
}

/// First and second moments plus the update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Biases, gains and other rank-1 tensors are not decayed.
fn decays(shape: &[usize]) -> bool {
    shape.len() >= 2
}

/// One update in place.
pub fn adam_step(
    cfg: &AdamConfig,
    state: &mut AdamState,
    params: &mut ParamSet,
    grads: &ParamSet,
    lr: f64,
) -> Result<()> {
    params.check_compatible(grads)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let n = params.len();
    for i in 0..n {
        let wd = if decays(&params.t(i).shape) {
            cfg.weight_decay
        } else {
            0.0
        };
        let g = &grads.t(i).data;
        let m = &mut state.m.t_mut(i).data;
        let v = &mut state.v.t_mut(i).data;
        let p = &mut params.t_mut(i).data;
        for k in 0..p.len() {
            let mut gk = g[k];
            if !cfg.decoupled && wd != 0.0 {
                gk += wd * p[k];
            }
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            let mut upd = mhat / (vhat.sqrt() + cfg.eps);
            if cfg.decoupled {
                upd += wd * p[k];
            }
            p[k] -= lr * upd;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn params() -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
        p.push("b", Tensor::from_vec(&[2], vec![0.1, -0.1]).unwrap());
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = params();
        let mut g = p.zeros_like();
        g.t_mut(0).data = vec![0.5, -0.5, 2.0, 0.0];
        let cfg = AdamConfig::adam();
        let mut st = AdamState::new(&p);
        adam_step(&cfg, &mut st, &mut p, &g, 0.1).unwrap();
        // bias-corrected first step is lr * sign(g) up to eps
        assert!((p.t(0).data[0] - 0.9).abs() < 1e-5);
        assert!((p.t(0).data[1] + 1.9).abs() < 1e-5);
        assert_eq!(p.t(0).data[3], 3.0);
    }

    #[test]
    fn adamw_without_decay_equals_adam() {
        let mut a = params();
        let mut b = params();
        let wcfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let acfg = AdamConfig::adam();
        let (mut sa, mut sb) = (AdamState::new(&a), AdamState::new(&b));
        for s in 0..20 {
            let mut g = a.zeros_like();
            for (i, t) in g.tensors_mut().iter_mut().enumerate() {
                for (k, x) in t.data.iter_mut().enumerate() {
                    *x = ((s * 7 + i * 3 + k) as f64).sin();
                }
            }
            adam_step(&wcfg, &mut sa, &mut a, &g, 1e-2).unwrap();
            adam_step(&acfg, &mut sb, &mut b, &g, 1e-2).unwrap();
        }
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            for (p, q) in x.data.iter().zip(&y.data) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decay_skips_vectors() {
        let mut p = params();
        let g = p.zeros_like();
        let cfg = AdamConfig {
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(&p);
        adam_step(&cfg, &mut st, &mut p, &g, 0.1).unwrap();
        assert_eq!(p.t(1).data, vec![0.1, -0.1]);
        assert!((p.t(0).data[0] - 0.95).abs() < 1e-12);
    }
}
