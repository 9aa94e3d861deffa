//! SGD-with-momentum and Adam. Weight decay is applied as an L2 term on the
//! gradient. Non-trainable parameters are never touched, bit for bit.

use super::param::ParamStore;
use super::{Elem, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimKind {
    SgdMomentum,
    Adam,
}

impl std::fmt::Display for OptimKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimKind::SgdMomentum => write!(f, "sgd-momentum"),
            OptimKind::Adam => write!(f, "adam"),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    /// Momentum for SGD, beta1 for Adam.
    pub momentum: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            kind: OptimKind::Adam,
            lr: 3e-3,
            momentum: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state: step count plus per-parameter moment buffers, lazily
/// allocated the first time a parameter receives a gradient.
pub struct Optimizer<E: Elem = f32> {
    pub config: OptimConfig,
    step: u64,
    m: Vec<Option<Tensor<E>>>,
    v: Vec<Option<Tensor<E>>>,
}

impl<E: Elem> Optimizer<E> {
    pub fn new(config: OptimConfig, param_count: usize) -> Self {
        Optimizer {
            config,
            step: 0,
            m: (0..param_count).map(|_| None).collect(),
            v: (0..param_count).map(|_| None).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<E>, grads: &[(usize, Tensor<E>)]) -> Result<()> {
        self.step += 1;
        let c = self.config;
        for (idx, grad) in grads {
            let slot = store.slot_mut(*idx);
            if !slot.trainable {
                continue;
            }
            if slot.value.shape() != grad.shape() {
                return Err(Error::Dim(format!(
                    "gradient shape {:?} vs parameter {:?} for {}",
                    grad.shape(),
                    slot.value.shape(),
                    slot.name
                )));
            }
            match c.kind {
                OptimKind::SgdMomentum => {
                    let vel = self.m[*idx]
                        .get_or_insert_with(|| Tensor::zeros(grad.shape()));
                    let mu = E::from_f64(c.momentum);
                    let lr = E::from_f64(c.lr);
                    let wd = E::from_f64(c.weight_decay);
                    for ((p, v), &g0) in slot
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(vel.data_mut())
                        .zip(grad.data())
                    {
                        let g = g0 + wd * *p;
                        *v = mu * *v + g;
                        *p -= lr * *v;
                    }
                }
                OptimKind::Adam => {
                    let ms = self.m[*idx].get_or_insert_with(|| Tensor::zeros(grad.shape()));
                    let vs = self.v[*idx].get_or_insert_with(|| Tensor::zeros(grad.shape()));
                    let b1 = c.momentum;
                    let b2 = c.beta2;
                    let bc1 = 1.0 - b1.powi(self.step as i32);
                    let bc2 = 1.0 - b2.powi(self.step as i32);
                    let lr = c.lr;
                    let wd = E::from_f64(c.weight_decay);
                    for (((p, m), v), &g0) in slot
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(ms.data_mut())
                        .zip(vs.data_mut())
                        .zip(grad.data())
                    {
                        let g = (g0 + wd * *p).to_f64();
                        let mf = b1 * m.to_f64() + (1.0 - b1) * g;
                        let vf = b2 * v.to_f64() + (1.0 - b2) * g * g;
                        *m = E::from_f64(mf);
                        *v = E::from_f64(vf);
                        let mhat = mf / bc1;
                        let vhat = vf / bc2;
                        *p -= E::from_f64(lr * mhat / (vhat.sqrt() + c.epsilon));
                    }
                }
            }
        }
        Ok(())
    }

    /// Moment buffers as named tensors for checkpointing; names are prefixed
    /// so they never collide with model parameters.
    pub fn state_tensors(&self, store: &ParamStore<E>) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        for (i, m) in self.m.iter().enumerate() {
            if let Some(t) = m {
                out.push((format!("optim.m.{}", store.slot(i).name), t.clone()));
            }
        }
        for (i, v) in self.v.iter().enumerate() {
            if let Some(t) = v {
                out.push((format!("optim.v.{}", store.slot(i).name), t.clone()));
            }
        }
        out
    }

    pub fn load_state(
        &mut self,
        store: &ParamStore<E>,
        step: u64,
        tensors: &[(String, Tensor<E>)],
    ) -> Result<()> {
        self.step = step;
        for (name, t) in tensors {
            if let Some(rest) = name.strip_prefix("optim.m.") {
                let idx = store
                    .find(rest)
                    .ok_or_else(|| Error::Checkpoint(format!("moment for unknown parameter {rest}")))?;
                self.m[idx] = Some(t.clone());
            } else if let Some(rest) = name.strip_prefix("optim.v.") {
                let idx = store
                    .find(rest)
                    .ok_or_else(|| Error::Checkpoint(format!("moment for unknown parameter {rest}")))?;
                self.v[idx] = Some(t.clone());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::param::ParamKind;

    fn one_param_store(v: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("p".into(), Tensor::full(&[1], v), ParamKind::Weight, false);
        s
    }

    #[test]
    fn sgd_plain_step() {
        let mut store = one_param_store(1.0);
        let cfg = OptimConfig {
            kind: OptimKind::SgdMomentum,
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut opt = Optimizer::new(cfg, 1);
        opt.step(&mut store, &[(0, Tensor::full(&[1], 1.0))]).unwrap();
        assert!((store.slot(0).value.data()[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut store = one_param_store(0.0);
        let cfg = OptimConfig {
            kind: OptimKind::SgdMomentum,
            lr: 1.0,
            momentum: 0.5,
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut opt = Optimizer::new(cfg, 1);
        // v1 = 1 → p = -1; v2 = 0.5 + 1 = 1.5 → p = -2.5
        opt.step(&mut store, &[(0, Tensor::full(&[1], 1.0))]).unwrap();
        opt.step(&mut store, &[(0, Tensor::full(&[1], 1.0))]).unwrap();
        assert!((store.slot(0).value.data()[0] + 2.5).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut store = one_param_store(0.75);
        for kind in [OptimKind::SgdMomentum, OptimKind::Adam] {
            let cfg = OptimConfig { kind, lr: 0.0, ..OptimConfig::default() };
            let mut opt = Optimizer::new(cfg, 1);
            opt.step(&mut store, &[(0, Tensor::full(&[1], 3.0))]).unwrap();
            assert_eq!(store.slot(0).value.data()[0], 0.75);
        }
    }

    #[test]
    fn adam_first_step_equals_lr() {
        let mut store = one_param_store(1.0);
        let cfg = OptimConfig {
            kind: OptimKind::Adam,
            lr: 0.05,
            momentum: 0.9,
            beta2: 0.999,
            epsilon: 0.0,
            weight_decay: 0.0,
        };
        let mut opt = Optimizer::new(cfg, 1);
        opt.step(&mut store, &[(0, Tensor::full(&[1], 1.0))]).unwrap();
        assert!((store.slot(0).value.data()[0] - 0.95).abs() < 1e-9);
    }

    #[test]
    fn frozen_param_bit_identical() {
        let mut store = one_param_store(0.123456789);
        store.slot_mut(0).trainable = false;
        let before = store.slot(0).value.data()[0].to_bits();
        let mut opt = Optimizer::new(OptimConfig::default(), 1);
        for _ in 0..10 {
            opt.step(&mut store, &[(0, Tensor::full(&[1], 2.0))]).unwrap();
        }
        assert_eq!(store.slot(0).value.data()[0].to_bits(), before);
    }
}
