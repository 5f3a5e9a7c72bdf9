use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Initial value of a parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Const(f64),
    /// Zero-mean normal with standard deviation `sqrt(2 / fan_in)`.
    KaimingNormal {
        fan_in: usize,
    },
    /// Uniform on `[-bound, bound]`.
    Uniform {
        bound: f64,
    },
}

#[derive(Debug, Clone)]
struct Entry {
    var: Var,
    shape: Vec<usize>,
    trainable: bool,
}

/// Named parameters and buffers, initialised from a seeded generator so
/// that equal seeds build bit-identical models.
///
/// A shape-only store records names and shapes without allocating, which
/// makes parameter counts of very wide models cheap.
#[derive(Debug)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
    shape_only: bool,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            entries: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
            shape_only: false,
        }
    }

    pub fn shape_only() -> Self {
        Self {
            shape_only: true,
            ..Self::new(0, DType::F32, &Device::Cpu)
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn is_shape_only(&self) -> bool {
        self.shape_only
    }

    /// Registers a trainable parameter.
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.create(name, shape, init, true)
    }

    /// Registers a non-trainable buffer (batch-norm running statistics).
    pub fn buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.create(name, shape, init, false)
    }

    fn create(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Result<Var> {
        if self.entries.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let var = if self.shape_only {
            Var::zeros(1, self.dtype, &self.device)?
        } else {
            let n: usize = shape.iter().product();
            let values: Vec<f64> = match init {
                Init::Const(c) => vec![c; n],
                Init::KaimingNormal { fan_in } => {
                    let std = (2.0 / fan_in.max(1) as f64).sqrt();
                    (0..n)
                        .map(|_| std * self.rng.sample::<f64, _>(StandardNormal))
                        .collect()
                }
                Init::Uniform { bound } => (0..n)
                    .map(|_| {
                        if bound > 0.0 {
                            self.rng.random_range(-bound..bound)
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            };
            let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
            Var::from_tensor(&t)?
        };
        self.entries.insert(
            name.to_string(),
            Entry {
                var: var.clone(),
                shape: shape.to_vec(),
                trainable,
            },
        );
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.get(name).map(|e| &e.var)
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.entries.get(name).map(|e| e.shape.as_slice())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    /// All parameters and buffers in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.var))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(k, e)| (k.as_str(), &e.var))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.shape.iter().product::<usize>())
            .sum()
    }

    /// Overwrites one entry; shape must match.
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if value.dims() != e.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: stored shape {:?}, model shape {:?}",
                value.dims(),
                e.shape
            )));
        }
        let v = value.to_dtype(self.dtype)?.to_device(&self.device)?.contiguous()?;
        e.var.set(&v)?;
        Ok(())
    }
}

/// Joins a module path and a leaf name with a dot.
pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
