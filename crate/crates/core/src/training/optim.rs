use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

/// Adam moments with decoupled weight decay:
/// `p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)`.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter. Parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, var) in params.trainable() {
            let p = var.as_tensor();
            // Accumulated gradients can still reference the backward graph.
            let g = match grads.get(p) {
                Some(g) => g.detach(),
                None => p.zeros_like()?,
            };
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?,
                None => (&g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            // A zero rate leaves parameters bit-identical.
            if lr != 0.0 {
                let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + self.eps)?)?;
                let decayed = if self.weight_decay == 0.0 {
                    p.detach()
                } else {
                    (p.detach() * (1.0 - lr * self.weight_decay))?
                };
                var.set(&(decayed - (update * lr)?)?)?;
            }
            self.m.insert(name.to_string(), m);
            self.v.insert(name.to_string(), v);
        }
        Ok(())
    }

    /// Moments as named tensors (`optim.m.<param>`, `optim.v.<param>`).
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        self.m
            .iter()
            .map(|(k, t)| (format!("optim.m.{k}"), t.clone()))
            .chain(self.v.iter().map(|(k, t)| (format!("optim.v.{k}"), t.clone())))
            .collect()
    }

    pub fn state(&self) -> OptimizerState {
        OptimizerState {
            step: self.step,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Restores scalars and moments saved by [`AdamW::state`] and
    /// [`AdamW::state_tensors`].
    pub fn restore(state: &OptimizerState, tensors: &BTreeMap<String, Tensor>, params: &ParamStore) -> Result<Self> {
        let mut opt = AdamW {
            beta1: state.beta1,
            beta2: state.beta2,
            eps: state.eps,
            weight_decay: state.weight_decay,
            step: state.step,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        };
        if state.step == 0 {
            return Ok(opt);
        }
        for (name, var) in params.trainable() {
            for (prefix, slot) in [("optim.m.", &mut opt.m), ("optim.v.", &mut opt.v)] {
                let key = format!("{prefix}{name}");
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks {key}")))?;
                let t = t.to_dtype(var.dtype())?.to_device(var.device())?;
                slot.insert(name.to_string(), t);
            }
        }
        Ok(opt)
    }
}

/// Scalar optimizer state stored in checkpoint metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &ParamStore, grads: &mut GradStore, max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for (_, var) in params.trainable() {
        if let Some(g) = grads.get(var.as_tensor()) {
            sq += g
                .sqr()?
                .sum_all()?
                .to_dtype(candle_core::DType::F64)?
                .to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, var) in params.trainable() {
            if let Some(g) = grads.remove(var.as_tensor()) {
                grads.insert(var.as_tensor(), (g.detach() * scale)?);
            }
        }
    }
    Ok(norm)
}
