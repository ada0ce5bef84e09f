//! Rectified Adam.
//!
//! With `rho_inf = 2 / (1 - beta2) - 1` and
//! `rho_t = rho_inf - 2 t beta2^t / (1 - beta2^t)`, a step applies the
//! variance-rectified adaptive update when `rho_t > 4` and plain
//! bias-corrected momentum otherwise. With `beta2 = 0.999` the first
//! rectified step is step 5.

use crate::autodiff::{ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RadamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl RadamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite()) || !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::config(format!("invalid RAdam settings {self:?}")));
        }
        Ok(())
    }

    pub fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta2) - 1.0
    }

    /// Length of the approximated simple moving average at step `t >= 1`.
    pub fn rho(&self, t: u64) -> f64 {
        let b = self.beta2.powf(t as f64);
        self.rho_inf() - 2.0 * t as f64 * b / (1.0 - b)
    }

    /// Variance rectification factor, `None` when `rho_t <= 4`.
    pub fn rectification(&self, t: u64) -> Option<f64> {
        let rho = self.rho(t);
        if rho <= 4.0 {
            return None;
        }
        let inf = self.rho_inf();
        Some(((rho - 4.0) * (rho - 2.0) * inf / ((inf - 4.0) * (inf - 2.0) * rho)).sqrt())
    }
}

/// Outcome of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub step: u64,
    pub rho: f64,
    pub rectified: bool,
}

/// Moments and step counter for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct RadamState {
    pub config: RadamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl RadamState {
    pub fn new(config: RadamConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let m: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Ok(Self { config, step: 0, v: m.clone(), m })
    }

    /// Rebuild a state from saved moments.
    pub fn from_parts(config: RadamConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::shape("first and second moments disagree"));
        }
        Ok(Self { config, step, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Apply one update using the gradients accumulated in `store`.
    ///
    /// A non-finite gradient rejects the whole step and leaves both the
    /// parameters and the state untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<StepInfo> {
        if store.len() != self.m.len() {
            return Err(Error::shape(format!("optimizer tracks {} tensors, store has {}", self.m.len(), store.len())));
        }
        for ((_, p), m) in store.iter().zip(&self.m) {
            if p.value.shape() != m.shape() {
                return Err(Error::shape(format!("parameter {} changed shape", p.name)));
            }
            if !p.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {} at step {}", p.name, self.step + 1)));
            }
        }
        self.step += 1;
        let t = self.step;
        let RadamConfig { lr, beta1, beta2, eps } = self.config;
        let bias1 = 1.0 - beta1.powf(t as f64);
        let bias2 = 1.0 - beta2.powf(t as f64);
        let rect = self.config.rectification(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for (((x, g), mi), vi) in value.iter_mut().zip(grad).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bias1;
                match rect {
                    Some(r) => {
                        let v_hat = (*vi / bias2).sqrt();
                        *x -= lr * r * m_hat / (v_hat + eps);
                    }
                    None => *x -= lr * m_hat,
                }
            }
        }
        Ok(StepInfo { step: t, rho: self.config.rho(t), rectified: rect.is_some() })
    }
}

/// One RAdam update of `store` from its accumulated gradients.
pub fn radam_step(state: &mut RadamState, store: &mut ParamStore) -> Result<StepInfo> {
    state.step(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store_with(values: Vec<f64>) -> ParamStore {
        let mut store = ParamStore::new();
        let n = values.len();
        store.add("w", Tensor::new(vec![n], values).unwrap()).unwrap();
        store
    }

    fn set_grad(store: &mut ParamStore, grad: impl Fn(f64) -> f64) {
        for p in store.iter_mut() {
            let vals: Vec<f64> = p.value.data().to_vec();
            for (g, x) in p.grad.data_mut().iter_mut().zip(vals) {
                *g = grad(x);
            }
        }
    }

    #[test]
    fn rho_sequence_crosses_four_at_step_five() {
        let cfg = RadamConfig::default();
        assert!((cfg.rho_inf() - 1999.0).abs() < 1e-9);
        // independent evaluation of the same closed form
        let rho = |t: i32| 1999.0 - 2.0 * t as f64 * 0.999f64.powi(t) / (1.0 - 0.999f64.powi(t));
        for t in 1..=10u64 {
            assert!((cfg.rho(t) - rho(t as i32)).abs() < 1e-9);
            assert_eq!(cfg.rectification(t).is_some(), t >= 5, "step {t}");
        }
        assert!(cfg.rho(4) < 4.0 && cfg.rho(5) > 4.0);
    }

    #[test]
    fn branch_switch_is_observed_in_steps() {
        let mut store = store_with(vec![1.0, -2.0]);
        let mut state = RadamState::new(RadamConfig::default(), &store).unwrap();
        let mut flags = Vec::new();
        for _ in 0..6 {
            set_grad(&mut store, |x| x);
            flags.push(state.step(&mut store).unwrap().rectified);
        }
        assert_eq!(flags, [false, false, false, false, true, true]);
    }

    #[test]
    fn first_step_is_plain_momentum() {
        let mut store = store_with(vec![1.0]);
        let mut state = RadamState::new(RadamConfig::default(), &store).unwrap();
        set_grad(&mut store, |_| 0.5);
        state.step(&mut store).unwrap();
        // m_hat equals the gradient after bias correction
        assert!((store.iter().next().unwrap().1.value.data()[0] - (1.0 - 1e-3 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut store = store_with(vec![0.3, -0.7, 2.0]);
        let before = store.clone();
        let mut state = RadamState::new(RadamConfig::default(), &store).unwrap();
        for _ in 0..10 {
            state.step(&mut store).unwrap();
        }
        assert_eq!(store, before);
    }

    #[test]
    fn quadratic_loss_decreases_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = store_with((0..20).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let cfg = RadamConfig { lr: 1e-2, ..Default::default() };
        let mut state = RadamState::new(cfg, &store).unwrap();
        let loss = |s: &ParamStore| 0.5 * s.iter().map(|(_, p)| p.value.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>();
        let mut last = loss(&store);
        for _ in 0..100 {
            set_grad(&mut store, |x| x);
            state.step(&mut store).unwrap();
            let now = loss(&store);
            assert!(now < last, "{now} >= {last}");
            last = now;
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_side_effects() {
        let mut store = store_with(vec![1.0, 2.0]);
        let mut state = RadamState::new(RadamConfig::default(), &store).unwrap();
        set_grad(&mut store, |x| if x > 1.5 { f64::NAN } else { x });
        let (s0, st0) = (store.clone(), state.clone());
        assert!(matches!(state.step(&mut store), Err(Error::NonFinite(_))));
        let values = |s: &ParamStore| s.iter().next().unwrap().1.value.clone();
        assert_eq!(values(&store), values(&s0));
        assert_eq!(state, st0);
    }

    #[test]
    fn bad_settings_are_config_errors() {
        let store = store_with(vec![1.0]);
        for cfg in [
            RadamConfig { lr: 0.0, ..Default::default() },
            RadamConfig { beta2: 1.0, ..Default::default() },
            RadamConfig { eps: -1.0, ..Default::default() },
        ] {
            assert!(matches!(RadamState::new(cfg, &store), Err(Error::InvalidConfig(_))));
        }
    }
}
