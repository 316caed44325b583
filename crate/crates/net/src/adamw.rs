//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::float::Float;
use crate::model::{Grads, ParamInfo};
use crate::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { learning_rate: 0.002, weight_decay: 0.01, betas: (0.9, 0.999), eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new(info: &[ParamInfo]) -> Self {
        Self {
            m: info.iter().map(|p| vec![T::zero(); p.len]).collect(),
            v: info.iter().map(|p| vec![T::zero(); p.len]).collect(),
            t: 0,
        }
    }
}

/// One update of every tensor in `params`. Tensors whose `info` entry has
/// `decay == false` (biases, batch-norm scale and shift) skip the decay.
pub fn adamw_step<T: Float>(
    params: &mut [&mut [T]],
    info: &[ParamInfo],
    grads: &Grads<T>,
    state: &mut AdamState<T>,
    cfg: &AdamWConfig,
) -> Result<(), NetError> {
    let n = params.len();
    if info.len() != n || grads.tensors.len() != n || state.m.len() != n {
        return Err(NetError::Shape {
            what: "optimizer tensors".into(),
            expected: vec![n],
            actual: vec![info.len(), grads.tensors.len(), state.m.len()],
        });
    }
    state.t += 1;
    let (b1, b2) = cfg.betas;
    let c1 = T::of(1.0 - b1.powi(state.t as i32));
    let c2 = T::of(1.0 - b2.powi(state.t as i32));
    let (b1, b2) = (T::of(b1), T::of(b2));
    let (lr, wd, eps) = (T::of(cfg.learning_rate), T::of(cfg.weight_decay), T::of(cfg.eps));
    let one = T::one();
    for (k, p) in params.iter_mut().enumerate() {
        let (g, m, v) = (&grads.tensors[k], &mut state.m[k], &mut state.v[k]);
        if p.len() != g.len() || m.len() != g.len() {
            return Err(NetError::Shape {
                what: format!("optimizer tensor {}", info[k].name),
                expected: vec![p.len()],
                actual: vec![g.len()],
            });
        }
        let decay = info[k].decay;
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            let theta = p[i];
            let mut next = theta;
            if decay {
                next -= lr * wd * theta;
            }
            next -= lr * (mh / (vh.sqrt() + eps));
            p[i] = next;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn info(decay: bool) -> Vec<ParamInfo> {
        vec![ParamInfo { name: "p".into(), len: 1, decay }]
    }

    fn step(theta: f64, g: f64, cfg: &AdamWConfig) -> f64 {
        let mut p = [theta];
        let mut st = AdamState::<f64>::new(&info(true));
        adamw_step(&mut [&mut p[..]], &info(true), &Grads { tensors: vec![vec![g]] }, &mut st, cfg).unwrap();
        assert_eq!(st.t, 1);
        p[0]
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // t = 1: m = 0.1, v = 0.001, both bias corrections give exactly one,
        // so theta' = 1 - 0.002 / (1 + 1e-8).
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let want = 0.998_000_000_02;
        assert!((step(1.0, 1.0, &cfg) - want).abs() < 1e-12, "{}", step(1.0, 1.0, &cfg));
    }

    #[test]
    fn pure_decay_with_zero_gradient() {
        let cfg = AdamWConfig::default();
        let theta = 0.75;
        assert_eq!(step(theta, 0.0, &cfg), theta - 0.002 * 0.01 * theta);
    }

    #[test]
    fn decay_is_decoupled_from_adaptive_term() {
        let with = step(-1.3, 0.4, &AdamWConfig::default());
        let without = step(-1.3, 0.4, &AdamWConfig { weight_decay: 0.0, ..Default::default() });
        assert!(((without - with) - 0.002 * 0.01 * -1.3).abs() < 1e-16);
    }

    #[test]
    fn excluded_tensors_do_not_decay() {
        let mut p = [2.0f64];
        let mut st = AdamState::new(&info(false));
        let g = Grads { tensors: vec![vec![0.0]] };
        adamw_step(&mut [&mut p[..]], &info(false), &g, &mut st, &AdamWConfig::default()).unwrap();
        assert_eq!(p[0], 2.0);
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut p = [0.5f64, -0.5];
        let i = vec![ParamInfo { name: "p".into(), len: 2, decay: true }];
        let mut st = AdamState::new(&i);
        for k in 0..10 {
            let g = Grads { tensors: vec![vec![(k as f64).sin(), -(k as f64).cos()]] };
            adamw_step(&mut [&mut p[..]], &i, &g, &mut st, &AdamWConfig::default()).unwrap();
            assert!(st.v[0].iter().all(|&v| v >= 0.0));
        }
        assert_eq!(st.t, 10);
    }
}
