//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamW {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    1e-2
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_weight_decay(),
        }
    }
}

/// First and second moments, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { step: 0, m, v }
    }
}

/// One AdamW update in place. Decay `p ← p(1 − lr·wd)` is applied before the
/// bias-corrected Adam step.
pub fn adamw_step(params: &mut [Vec<f64>], grads: &[&[f64]], state: &mut AdamState, opt: &AdamW, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "adamw: {} params, {} grads, {} state buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    let decay = 1.0 - lr * opt.weight_decay;
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::ShapeMismatch {
                op: "adamw",
                lhs: vec![p.len()],
                rhs: vec![g.len()],
            });
        }
        for i in 0..p.len() {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] = p[i] * decay - lr * mh / (vh.sqrt() + opt.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let mut p = vec![vec![1.0, -2.0]];
        let mut s = AdamState::new([2]);
        adamw_step(&mut p, &[&[0.0, 0.0]], &mut s, &opt, 0.1).unwrap();
        assert_eq!(p, vec![vec![1.0, -2.0]]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let g = [0.3, -4.0, 1e-3];
        let mut p = vec![vec![0.0; 3]];
        let mut s = AdamState::new([3]);
        adamw_step(&mut p, &[&g], &mut s, &opt, 0.01).unwrap();
        for (pi, gi) in p[0].iter().zip(g) {
            let expected = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15, "{pi} vs {expected}");
        }
    }

    #[test]
    fn decay_is_decoupled() {
        let opt = AdamW::default();
        let mut p = vec![vec![2.0]];
        let mut s = AdamState::new([1]);
        adamw_step(&mut p, &[&[0.0]], &mut s, &opt, 0.5).unwrap();
        assert_eq!(p[0][0], 2.0 * (1.0 - 0.5 * 1e-2));
    }

    #[test]
    fn converges_on_quadratic() {
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let c = [1.5, -0.7, 3.0];
        let mut p = vec![vec![0.0; 3]];
        let mut s = AdamState::new([3]);
        let mut steps = 0;
        while steps < 5000 {
            let g: Vec<f64> = p[0].iter().zip(c).map(|(x, ci)| x - ci).collect();
            adamw_step(&mut p, &[&g], &mut s, &opt, 1e-2).unwrap();
            steps += 1;
        }
        for (x, ci) in p[0].iter().zip(c) {
            assert!((x - ci).abs() < 1e-6, "{x} vs {ci}");
        }
    }
}
