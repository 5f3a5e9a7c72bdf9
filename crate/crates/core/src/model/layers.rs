use candle_core::{Tensor, Var, D};

use super::params::{join, Init, ParamStore};
use crate::error::Result;

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-statistic updates, gradient tracking.
    Train,
    /// Running statistics and detached parameters.
    Eval,
}

#[inline]
fn read(v: &Var, mode: Mode) -> Tensor {
    match mode {
        Mode::Train => v.as_tensor().clone(),
        Mode::Eval => v.as_detached_tensor(),
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = c_in / groups * kernel * kernel;
        let weight = store.param(
            &join(prefix, "weight"),
            &[c_out, c_in / groups, kernel, kernel],
            Init::KaimingNormal { fan_in },
        )?;
        let bias = if bias {
            Some(store.param(&join(prefix, "bias"), &[c_out], Init::Const(0.0))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding: kernel / 2,
            groups,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let w = read(&self.weight, mode);
        let y = x.conv2d(&w, self.padding, self.stride, 1, self.groups)?;
        Ok(match &self.bias {
            Some(b) => {
                let b = read(b, mode);
                let c = b.dim(0)?;
                y.broadcast_add(&b.reshape((1, c, 1, 1))?)?
            }
            None => y,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub weight: Var,
    pub bias: Var,
    pub running_mean: Var,
    pub running_var: Var,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: store.param(&join(prefix, "weight"), &[channels], Init::Const(1.0))?,
            bias: store.param(&join(prefix, "bias"), &[channels], Init::Const(0.0))?,
            running_mean: store.buffer(&join(prefix, "running_mean"), &[channels], Init::Const(0.0))?,
            running_var: store.buffer(&join(prefix, "running_var"), &[channels], Init::Const(1.0))?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = x.dim(1)?;
        let shape = (1, c, 1, 1);
        let gamma = read(&self.weight, mode).reshape(shape)?;
        let beta = read(&self.bias, mode).reshape(shape)?;
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = x.mean_keepdim((0, 2, 3))?;
                let centered = x.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
                let n = x.elem_count() / c;
                let unbiased = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                let m = self.momentum;
                let rm =
                    (self.running_mean.as_detached_tensor() * (1.0 - m))?.add(&(mean.detach().flatten_all()? * m)?)?;
                let rv = (self.running_var.as_detached_tensor() * (1.0 - m))?
                    .add(&(var.detach().flatten_all()? * (m * unbiased))?)?;
                self.running_mean.set(&rm)?;
                self.running_var.set(&rv)?;
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.as_detached_tensor().reshape(shape)?,
                self.running_var.as_detached_tensor().reshape(shape)?,
            ),
        };
        let inv = (var + self.eps)?.sqrt()?.recip()?;
        Ok(x.broadcast_sub(&mean)?
            .broadcast_mul(&inv)?
            .broadcast_mul(&gamma)?
            .broadcast_add(&beta)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, c_in: usize, c_out: usize) -> Result<Self> {
        let bound = 1.0 / (c_in as f64).sqrt();
        Ok(Self {
            weight: store.param(&join(prefix, "weight"), &[c_out, c_in], Init::Uniform { bound })?,
            bias: store.param(&join(prefix, "bias"), &[c_out], Init::Uniform { bound })?,
        })
    }

    /// `x` is `(batch, c_in)`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let w = read(&self.weight, mode);
        let b = read(&self.bias, mode);
        Ok(x.matmul(&w.t()?)?.broadcast_add(&b)?)
    }
}

/// Convolution without bias followed by batch norm.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &join(prefix, "conv"), c_in, c_out, kernel, stride, groups, false)?,
            bn: BatchNorm::new(store, &join(prefix, "bn"), c_out)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.bn.forward(&self.conv.forward(x, mode)?, mode)
    }
}

/// Logistic function through `tanh`, which stays finite for any input.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Log-softmax along the channel axis of an NCHW tensor.
pub fn log_softmax_channels(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Softmax along the channel axis of an NCHW tensor.
pub fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(1)?;
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Nearest-neighbour 2x upsampling of an NCHW tensor.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    Ok(x.reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, 2, w, 2))?
        .contiguous()?
        .reshape((n, c, 2 * h, 2 * w))?)
}

/// Global average pool to `(batch, channels)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

pub(crate) fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
