use std::collections::BTreeMap;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

/// One bias-corrected Adam update. Parameters with no entry in `grads` are
/// treated as having zero gradient.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate {lr} must be positive")));
    }
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(Error::shape(format!("gradient shape mismatch for {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, value) in params.iter_mut() {
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(value.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(value.shape()));
        let g = grads.get(name);
        for i in 0..value.numel() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            let mi = &mut m.data_mut()[i];
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            let vi = &mut v.data_mut()[i];
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m.data()[i] / bc1;
            let vhat = v.data()[i] / bc2;
            value.data_mut()[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Per-step decay that halves the weight of old values after
/// `half_life_epochs · steps_per_epoch` steps.
pub fn ema_decay(half_life_epochs: f64, steps_per_epoch: usize) -> Result<f64> {
    if !(half_life_epochs > 0.0) || steps_per_epoch == 0 {
        return Err(Error::invalid("EMA half-life and steps per epoch must be positive"));
    }
    Ok(0.5f64.powf(1.0 / (half_life_epochs * steps_per_epoch as f64)))
}

/// `shadow ← d·shadow + (1−d)·params`.
pub fn ema_update(shadow: &mut ParamStore, params: &ParamStore, decay: f64) -> Result<()> {
    for (name, s) in shadow.iter_mut() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("EMA shadow has unknown parameter {name}")))?;
        for (sv, pv) in s.data_mut().iter_mut().zip(p.data()) {
            *sv = decay * *sv + (1.0 - decay) * pv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamKind;

    fn store(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::full(&[3], value), ParamKind::Real);
        s
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = store(1.5);
        let mut st = AdamState::default();
        let grads = BTreeMap::from([("w".to_string(), Tensor::zeros(&[3]))]);
        st.m.insert("w".into(), Tensor::zeros(&[3]));
        st.v.insert("w".into(), Tensor::full(&[3], 0.5));
        adam_step(&mut p, &grads, &mut st, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.5; 3]);
        assert!((st.v["w"].data()[0] - 0.5 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn single_step_trace() {
        // Hand trace from zero state: m1 = 0.1 g, v1 = 0.001 g²,
        // mhat = g, vhat = g², update = -lr · g / (|g| + eps).
        let g = 0.3;
        let lr = 1e-2;
        let mut p = store(1.0);
        let mut st = AdamState::default();
        let grads = BTreeMap::from([("w".to_string(), Tensor::full(&[3], g))]);
        adam_step(&mut p, &grads, &mut st, lr, &AdamConfig::default()).unwrap();
        let m1: f64 = 0.1 * g;
        let v1: f64 = 0.001 * g * g;
        let mhat = m1 / (1.0 - 0.9);
        let vhat = v1 / (1.0 - 0.999);
        let expected = 1.0 - lr * mhat / (vhat.sqrt() + 1e-8);
        assert!((p.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
        assert!((expected - (1.0 - lr * g / (g + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut p = store(1.0);
        let mut st = AdamState::default();
        assert!(adam_step(&mut p, &BTreeMap::new(), &mut st, 0.0, &AdamConfig::default()).is_err());
    }

    #[test]
    fn ema_half_life() {
        let d = ema_decay(5.0, 100).unwrap();
        assert!((d.powi(500) - 0.5).abs() < 1e-12);

        let target = store(2.0);
        let mut shadow = store(0.0);
        for _ in 0..500 {
            ema_update(&mut shadow, &target, d).unwrap();
        }
        assert!((shadow.get("w").unwrap().data()[0] - 1.0).abs() < 1e-12);

        let mut same = store(2.0);
        ema_update(&mut same, &target, d).unwrap();
        assert!(same.get("w").unwrap().data().iter().all(|v| (v - 2.0).abs() < 1e-15));
    }
}
