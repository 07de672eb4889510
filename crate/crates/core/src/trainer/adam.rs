use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{Error, Result};
use crate::models::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Slot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
}

/// Adam with bias correction over the variables of one [`ParamStore`].
pub struct Adam {
    config: AdamConfig,
    step: u64,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Result<Self> {
        let slots = params
            .iter()
            .map(|(name, var)| {
                Ok(Slot {
                    name: name.to_string(),
                    var: var.clone(),
                    m: var.zeros_like()?,
                    v: var.zeros_like()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            step: 0,
            slots,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; variables without a gradient are left untouched.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for slot in &mut self.slots {
            let Some(g) = grads.get(&slot.var) else {
                continue;
            };
            slot.m = ((&slot.m * beta1)? + (g * (1.0 - beta1))?)?;
            slot.v = ((&slot.v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let m_hat = (&slot.m / bias1)?;
            let v_hat = (&slot.v / bias2)?;
            let delta = (m_hat / (v_hat.sqrt()? + eps)?)?;
            slot.var.set(&(slot.var.as_tensor() - (delta * lr)?)?)?;
        }
        Ok(())
    }

    /// Moment tensors keyed `{prefix}.m.{param}` / `{prefix}.v.{param}`.
    pub fn state(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for s in &self.slots {
            out.insert(format!("{prefix}.m.{}", s.name), s.m.clone());
            out.insert(format!("{prefix}.v.{}", s.name), s.v.clone());
        }
        out
    }

    pub fn load_state(&mut self, prefix: &str, step: u64, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for s in &mut self.slots {
            for (kind, dst) in [("m", &mut s.m), ("v", &mut s.v)] {
                let key = format!("{prefix}.{kind}.{}", s.name);
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::input(format!("missing optimizer state {key}")))?;
                if t.dims() != dst.dims() {
                    return Err(Error::shape(format!("optimizer state {key} has shape {:?}", t.dims())));
                }
                *dst = t.to_dtype(dst.dtype())?.to_device(dst.device())?;
            }
        }
        self.step = step;
        Ok(())
    }
}
