//! Named trainable parameters and their initialisation.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a parameter is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamKind {
    /// Multiplicative weight with the given fan-in.
    Weight { fan_in: usize },
    Bias,
    NormScale,
    NormShift,
}

#[derive(Debug, Clone)]
struct Param {
    var: Var,
    kind: ParamKind,
}

/// Ordered map of parameter name to variable.
///
/// Names are stable (`gen.res.3.conv1.weight`, `disc.block.5.bn.scale`, ...) and
/// are the keys used in checkpoints.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    device: Device,
    dtype: DType,
}

impl ParamStore {
    pub fn new(device: Device, dtype: DType) -> Self {
        Self {
            params: BTreeMap::new(),
            device,
            dtype,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Registers a zero-filled parameter (unit-filled for norm scales).
    pub fn register(&mut self, name: &str, shape: &[usize], kind: ParamKind) -> Result<Var> {
        if self.params.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter {name}")));
        }
        let init = match kind {
            ParamKind::NormScale => Tensor::ones(shape, self.dtype, &self.device)?,
            _ => Tensor::zeros(shape, self.dtype, &self.device)?,
        };
        let var = Var::from_tensor(&init)?;
        self.params.insert(
            name.to_string(),
            Param {
                var: var.clone(),
                kind,
            },
        );
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name).map(|p| &p.var)
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.params.get(name).map(|p| p.kind)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.var))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.params.values().map(|p| p.var.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.values().map(|p| p.var.elem_count()).sum()
    }

    /// Current values, keyed by name.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(k, p)| (k.clone(), p.var.as_tensor().detach()))
            .collect()
    }

    /// Overwrites every parameter from `values`; names and shapes must match exactly.
    pub fn load(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, p) in &self.params {
            let v = values
                .get(name)
                .ok_or_else(|| Error::input(format!("missing parameter {name}")))?;
            if v.dims() != p.var.dims() {
                return Err(Error::shape(format!(
                    "parameter {name}: expected {:?}, found {:?}",
                    p.var.dims(),
                    v.dims()
                )));
            }
            p.var
                .set(&v.to_device(&self.device)?.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| Error::input(format!("unknown parameter {name}")))?;
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }
}

/// Weight initialisation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightInit {
    /// Multiplier applied to MSRA-distributed weights.
    pub post_scale: f64,
}

impl Default for WeightInit {
    fn default() -> Self {
        Self { post_scale: 0.1 }
    }
}

impl WeightInit {
    /// Standard deviation of a weight with the given fan-in.
    pub fn std(&self, fan_in: usize) -> f64 {
        (2.0 / fan_in as f64).sqrt() * self.post_scale
    }
}

/// MSRA (He) normal initialisation scaled by `post_scale`; biases zero, norm scales one.
///
/// Parameters are visited in name order from a single seeded stream, so the
/// result depends only on the store layout and `seed`.
pub fn init_weights(store: &ParamStore, scheme: WeightInit, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, p) in &store.params {
        let value = match p.kind {
            ParamKind::Weight { fan_in } => {
                let normal = Normal::new(0.0, scheme.std(fan_in))
                    .map_err(|e| Error::config(format!("{name}: {e}")))?;
                let n = p.var.elem_count();
                let samples: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
                Tensor::from_vec(samples, p.var.dims(), store.device())?
            }
            ParamKind::Bias | ParamKind::NormShift => {
                Tensor::zeros(p.var.dims(), DType::F64, store.device())?
            }
            ParamKind::NormScale => Tensor::ones(p.var.dims(), DType::F64, store.device())?,
        };
        p.var.set(&value.to_dtype(store.dtype)?)?;
    }
    Ok(())
}
