use candle_core::Tensor;

use super::blocks::{BottleneckKind, BottleneckSe, DpnBlock, ResNetBlock};
use super::layers::{ConvBn, Mode};
use super::params::ParamStore;
use super::{EncoderKind, ModelConfig};
use crate::error::Result;

#[derive(Debug, Clone)]
pub enum Stage {
    ResNet(Vec<ResNetBlock>),
    Bottleneck(Vec<BottleneckSe>),
    Dpn(Vec<DpnBlock>),
}

impl Stage {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Stage::ResNet(blocks) => blocks.iter().try_fold(x.clone(), |x, b| b.forward(&x, mode)),
            Stage::Bottleneck(blocks) => blocks.iter().try_fold(x.clone(), |x, b| b.forward(&x, mode)),
            Stage::Dpn(blocks) => {
                let mut res = x.clone();
                let mut dense: Option<Tensor> = None;
                for b in blocks {
                    let (r, d) = b.forward(&res, dense.as_ref(), mode)?;
                    res = r;
                    dense = Some(d);
                }
                match dense {
                    Some(d) => Ok(Tensor::cat(&[&res, &d], 1)?),
                    None => Ok(res),
                }
            }
        }
    }
}

/// Stride-2 stem, five stages, max pooling between the first two.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub stem: ConvBn,
    pub stages: Vec<Stage>,
    out_channels: [usize; 5],
}

/// Stride of the first block in each stage.
const STAGE_STRIDES: [usize; 5] = [1, 1, 2, 2, 2];

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let stem = ConvBn::new(store, "encoder.stem", cfg.in_channels, cfg.stage_channels[0], 3, 2, 1)?;
        let mut c_in = cfg.stage_channels[0];
        let mut stages = Vec::with_capacity(5);
        let mut out_channels = [0; 5];
        for s in 0..5 {
            let base = cfg.stage_channels[s];
            let n = cfg.blocks_per_stage[s];
            let prefix = |b: usize| format!("encoder.stage{}.block{b}", s + 1);
            let stride = |b: usize| if b == 0 { STAGE_STRIDES[s] } else { 1 };
            let stage = match cfg.encoder {
                EncoderKind::ResNet => {
                    let mut blocks = Vec::with_capacity(n);
                    for b in 0..n {
                        blocks.push(ResNetBlock::new(store, &prefix(b), c_in, base, stride(b))?);
                        c_in = base;
                    }
                    Stage::ResNet(blocks)
                }
                EncoderKind::SeResNeXt | EncoderKind::SeNet => {
                    let kind = if cfg.encoder == EncoderKind::SeNet {
                        BottleneckKind::SeNet
                    } else {
                        BottleneckKind::SeResNeXt
                    };
                    let mut blocks = Vec::with_capacity(n);
                    for b in 0..n {
                        let block = BottleneckSe::new(
                            store,
                            &prefix(b),
                            kind,
                            c_in,
                            base,
                            stride(b),
                            cfg.groups,
                            cfg.se_reduction,
                        )?;
                        c_in = block.out_channels();
                        blocks.push(block);
                    }
                    Stage::Bottleneck(blocks)
                }
                EncoderKind::DualPathNet => {
                    let (residual, dense, growth) = cfg.dpn_widths(s);
                    let mut blocks = Vec::with_capacity(n);
                    for b in 0..n {
                        let block = DpnBlock::new(
                            store,
                            &prefix(b),
                            c_in,
                            residual,
                            (b == 0).then_some(dense),
                            base,
                            growth,
                            stride(b),
                            cfg.groups,
                        )?;
                        c_in = block.out_channels();
                        blocks.push(block);
                    }
                    Stage::Dpn(blocks)
                }
            };
            out_channels[s] = c_in;
            stages.push(stage);
        }
        Ok(Self {
            stem,
            stages,
            out_channels,
        })
    }

    /// Channels of the five skip tensors.
    pub fn out_channels(&self) -> [usize; 5] {
        self.out_channels
    }

    /// Per-stage feature maps at strides 2, 4, 8, 16 and 32.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Vec<Tensor>> {
        let mut feats = Vec::with_capacity(5);
        let mut h = self.stem.forward(x, mode)?.relu()?;
        for (s, stage) in self.stages.iter().enumerate() {
            if s == 1 {
                h = h.max_pool2d(2)?;
            }
            h = stage.forward(&h, mode)?;
            feats.push(h.clone());
        }
        Ok(feats)
    }
}
