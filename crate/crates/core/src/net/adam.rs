use serde::{Deserialize, Serialize};

use super::{NetConfig, Params, Real};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Params<T>,
    pub v: Params<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: &NetConfig) -> Self {
        Self {
            step: 0,
            m: Params::zeros(config),
            v: Params::zeros(config),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(params: &mut Params<T>, grads: &Params<T>, state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    let layout_ok = |other: &Params<T>| {
        other.entries.len() == params.entries.len()
            && other.entries.iter().zip(&params.entries).all(|(a, b)| a.data.len() == b.data.len())
    };
    if !layout_ok(grads) || !layout_ok(&state.m) || !layout_ok(&state.v) {
        return shape_err("gradient or optimizer state does not match the parameters");
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    let (c1, c2) = (T::of(c1), T::of(c2));
    for (((p, g), m), v) in params
        .entries
        .iter_mut()
        .zip(&grads.entries)
        .zip(&mut state.m.entries)
        .zip(&mut state.v.entries)
    {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + one_b1 * gi;
            v.data[i] = b2 * v.data[i] + one_b2 * gi * gi;
            let mh = m.data[i] / c1;
            let vh = v.data[i] / c2;
            p.data[i] = p.data[i] - lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (NetConfig, Params<f64>) {
        let c = NetConfig::tiny();
        let p = Params::init(&c, 1);
        (c, p)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (c, mut p) = setup();
        let before = p.clone();
        let mut s = AdamState::new(&c);
        adam_step(&mut p, &Params::zeros(&c), &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let (c, mut p) = setup();
        let before = p.clone();
        let mut g = Params::zeros(&c);
        for (k, e) in g.entries.iter_mut().enumerate() {
            for (i, v) in e.data.iter_mut().enumerate() {
                *v = if (i + k) % 2 == 0 { 0.3 } else { -2.0 };
            }
        }
        let mut s = AdamState::new(&c);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &mut s, &cfg).unwrap();
        // m̂ = g and v̂ = g², so the step is lr·g/(|g| + ε).
        for ((a, b), gg) in p.entries.iter().zip(&before.entries).zip(&g.entries) {
            for i in 0..a.data.len() {
                let gi: f64 = gg.data[i];
                let expect = -cfg.lr * gi / (gi.abs() + cfg.eps);
                assert!((a.data[i] - b.data[i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_given_inputs() {
        let (c, p) = setup();
        let g = Params::init(&c, 9);
        let run = || {
            let mut p = p.clone();
            let mut s = AdamState::new(&c);
            adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
            adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn layout_mismatch() {
        let (c, mut p) = setup();
        let other = Params::<f64>::zeros(&NetConfig::default());
        let mut s = AdamState::new(&c);
        assert!(adam_step(&mut p, &other, &mut s, &AdamConfig::default()).is_err());
    }
}
