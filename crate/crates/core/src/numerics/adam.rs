use serde::{Deserialize, Serialize};

use super::params::Param;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
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

/// First/second moment accumulators, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Param]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }
}

/// One bias-corrected Adam update.
///
/// Elements whose gradient is exactly zero are left untouched (parameter
/// and moments alike), so a zero gradient is a no-op for any state. The step
/// counter advances regardless.
pub fn adam_step(params: &mut [Param], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::shape(format!("adam gradient for `{}`", p.name), p.value.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.value.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for (i, &gi) in g.data().iter().enumerate() {
            if gi == 0.0 {
                continue;
            }
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            pd[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: &[f64]) -> Vec<Param> {
        vec![Param {
            name: "w".into(),
            value: Tensor::row(v),
        }]
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = param(&[1.0, -2.0]);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &[Tensor::row(&[0.5, -0.5])], &mut st, &cfg).unwrap();
        let before = p.clone();
        adam_step(&mut p, &[Tensor::row(&[0.0, 0.0])], &mut st, &cfg).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step(), 2);
    }

    #[test]
    fn first_step_magnitude() {
        let cfg = AdamConfig::with_lr(0.01);
        for g in [3.0, -0.2, 1e-9] {
            let mut p = param(&[1.0]);
            let mut st = AdamState::new(&p);
            adam_step(&mut p, &[Tensor::row(&[g])], &mut st, &cfg).unwrap();
            let delta = p[0].value.item() - 1.0;
            // m̂ = g, v̂ = g² on the first step
            let expected = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((delta - expected).abs() < 1e-15, "{delta} vs {expected}");
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = param(&[1.0]);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &[Tensor::row(&[f64::NAN])], &mut st, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = param(&[0.3, 0.7]);
            let mut st = AdamState::new(&p);
            for k in 0..10 {
                let g = Tensor::row(&[(k as f64).sin(), (k as f64).cos()]);
                adam_step(&mut p, &[g], &mut st, &AdamConfig::default()).unwrap();
            }
            p[0].value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
