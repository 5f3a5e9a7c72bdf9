use candle_core::Tensor;

use super::layers::{global_avg_pool, sigmoid, ConvBn, Linear, Mode};
use super::params::{join, ParamStore};
use crate::error::{Error, Result};

/// Two 3x3 conv-BN layers with an identity or projected shortcut.
#[derive(Debug, Clone)]
pub struct ResNetBlock {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub projection: Option<ConvBn>,
    pub c_in: usize,
    pub c_out: usize,
}

impl ResNetBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        let projection = if c_in != c_out || stride != 1 {
            Some(ConvBn::new(store, &join(prefix, "proj"), c_in, c_out, 1, stride, 1)?)
        } else {
            None
        };
        Ok(Self {
            conv1: ConvBn::new(store, &join(prefix, "conv1"), c_in, c_out, 3, stride, 1)?,
            conv2: ConvBn::new(store, &join(prefix, "conv2"), c_out, c_out, 3, 1, 1)?,
            projection,
            c_in,
            c_out,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        check_channels(x, self.c_in, "resnet block")?;
        let y = self.conv1.forward(x, mode)?.relu()?;
        let y = self.conv2.forward(&y, mode)?;
        let shortcut = match &self.projection {
            Some(p) => p.forward(x, mode)?,
            None => x.clone(),
        };
        Ok((y + shortcut)?.relu()?)
    }
}

/// Squeeze-and-excitation channel gate.
#[derive(Debug, Clone)]
pub struct SeModule {
    pub fc1: Linear,
    pub fc2: Linear,
    pub channels: usize,
}

impl SeModule {
    /// Hidden width is `ceil(channels / reduction)`, at least one.
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = channels.div_ceil(reduction.max(1)).max(1);
        Ok(Self {
            fc1: Linear::new(store, &join(prefix, "fc1"), channels, hidden)?,
            fc2: Linear::new(store, &join(prefix, "fc2"), hidden, channels)?,
            channels,
        })
    }

    /// Per-sample, per-channel gate values in `(0, 1)`, shape `(batch, channels)`.
    pub fn gate(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        check_channels(x, self.channels, "se module")?;
        let s = global_avg_pool(x)?;
        let s = self.fc1.forward(&s, mode)?.relu()?;
        sigmoid(&self.fc2.forward(&s, mode)?)
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, _, _) = x.dims4()?;
        let g = self.gate(x, mode)?.reshape((n, c, 1, 1))?;
        Ok(x.broadcast_mul(&g)?)
    }
}

/// Bottleneck flavours carrying an SE gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BottleneckKind {
    /// Grouped 3x3 at constant width, final pointwise expands 4x.
    SeResNeXt,
    /// Ungrouped 3x3 expands 4x, final pointwise keeps the width.
    SeNet,
}

#[derive(Debug, Clone)]
pub struct BottleneckSe {
    pub kind: BottleneckKind,
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub conv3: ConvBn,
    pub se: SeModule,
    pub projection: Option<ConvBn>,
    trace: [usize; 4],
}

impl BottleneckSe {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        kind: BottleneckKind,
        c_in: usize,
        width: usize,
        stride: usize,
        groups: usize,
        reduction: usize,
    ) -> Result<Self> {
        let out = 4 * width;
        let (mid, g) = match kind {
            BottleneckKind::SeResNeXt => (width, super::layers::gcd(groups.max(1), width)),
            BottleneckKind::SeNet => (out, 1),
        };
        let projection = if c_in != out || stride != 1 {
            Some(ConvBn::new(store, &join(prefix, "proj"), c_in, out, 1, stride, 1)?)
        } else {
            None
        };
        Ok(Self {
            kind,
            conv1: ConvBn::new(store, &join(prefix, "conv1"), c_in, width, 1, 1, 1)?,
            conv2: ConvBn::new(store, &join(prefix, "conv2"), width, mid, 3, stride, g)?,
            conv3: ConvBn::new(store, &join(prefix, "conv3"), mid, out, 1, 1, 1)?,
            se: SeModule::new(store, &join(prefix, "se"), out, reduction)?,
            projection,
            trace: [c_in, width, mid, out],
        })
    }

    /// Channel counts: input, after each of the three convolutions.
    pub fn channel_trace(&self) -> [usize; 4] {
        self.trace
    }

    pub fn out_channels(&self) -> usize {
        self.trace[3]
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        check_channels(x, self.trace[0], "bottleneck block")?;
        let y = self.conv1.forward(x, mode)?.relu()?;
        let y = self.conv2.forward(&y, mode)?.relu()?;
        let y = self.conv3.forward(&y, mode)?;
        let y = self.se.forward(&y, mode)?;
        let shortcut = match &self.projection {
            Some(p) => p.forward(x, mode)?,
            None => x.clone(),
        };
        Ok((y + shortcut)?.relu()?)
    }
}

/// Dual-path block: a shared bottleneck whose output is split into a
/// residual update and new dense channels.
#[derive(Debug, Clone)]
pub struct DpnBlock {
    /// Present on the first block of a stage: maps the incoming features to
    /// the initial residual and dense tensors.
    pub projection: Option<ConvBn>,
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub conv3: ConvBn,
    pub c_in: usize,
    pub residual: usize,
    pub dense_in: usize,
    pub growth: usize,
}

impl DpnBlock {
    /// `c_in` counts all incoming channels (residual plus dense).
    /// With `initial_dense = Some(d)` the block projects its input to
    /// `residual + d` channels first.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        residual: usize,
        initial_dense: Option<usize>,
        width: usize,
        growth: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self> {
        let (projection, dense_in) = match initial_dense {
            Some(d) => (
                Some(ConvBn::new(
                    store,
                    &join(prefix, "proj"),
                    c_in,
                    residual + d,
                    1,
                    stride,
                    1,
                )?),
                d,
            ),
            None => {
                if stride != 1 || c_in < residual {
                    return Err(Error::InvalidArgument(
                        "dual-path block without projection must keep resolution and residual width".into(),
                    ));
                }
                (None, c_in - residual)
            }
        };
        let g = super::layers::gcd(groups.max(1), width);
        Ok(Self {
            projection,
            conv1: ConvBn::new(store, &join(prefix, "conv1"), c_in, width, 1, 1, 1)?,
            conv2: ConvBn::new(store, &join(prefix, "conv2"), width, width, 3, stride, g)?,
            conv3: ConvBn::new(store, &join(prefix, "conv3"), width, residual + growth, 1, 1, 1)?,
            c_in,
            residual,
            dense_in,
            growth,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.residual + self.dense_in + self.growth
    }

    /// Returns `(res_out, dense_out)`. `dense` is `None` when the input is a
    /// single tensor (the first block of a stage).
    pub fn forward(&self, res: &Tensor, dense: Option<&Tensor>, mode: Mode) -> Result<(Tensor, Tensor)> {
        let x = match dense {
            Some(d) => Tensor::cat(&[res, d], 1)?,
            None => res.clone(),
        };
        check_channels(&x, self.c_in, "dual-path block")?;
        let (res_in, dense_in) = match &self.projection {
            Some(p) => {
                let y = p.forward(&x, mode)?;
                (
                    y.narrow(1, 0, self.residual)?,
                    y.narrow(1, self.residual, self.dense_in)?,
                )
            }
            None => match dense {
                Some(d) => (res.clone(), d.clone()),
                None => (
                    x.narrow(1, 0, self.residual)?,
                    x.narrow(1, self.residual, self.dense_in)?,
                ),
            },
        };
        let y = self.conv1.forward(&x, mode)?.relu()?;
        let y = self.conv2.forward(&y, mode)?.relu()?;
        let y = self.conv3.forward(&y, mode)?;
        let a = y.narrow(1, 0, self.residual)?;
        let b = y.narrow(1, self.residual, self.growth)?;
        Ok(((res_in + a)?, Tensor::cat(&[&dense_in, &b], 1)?))
    }
}

pub(crate) fn check_channels(x: &Tensor, expected: usize, what: &str) -> Result<()> {
    let dims = x.dims();
    if dims.len() != 4 || dims[1] != expected {
        return Err(Error::ShapeMismatch(format!(
            "{what} expects (N, {expected}, H, W), got {dims:?}"
        )));
    }
    Ok(())
}
