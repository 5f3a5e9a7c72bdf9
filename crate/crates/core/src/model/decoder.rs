use candle_core::Tensor;

use super::layers::{upsample2x, Conv2d, Mode};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Nearest 2x upsampling, optional skip concatenation, 3x3 conv, ReLU.
#[derive(Debug, Clone)]
pub struct DecoderStage {
    pub conv: Conv2d,
    pub deep_channels: usize,
    pub skip_channels: usize,
    pub out_channels: usize,
}

impl DecoderStage {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        deep_channels: usize,
        skip_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(
                store,
                prefix,
                deep_channels + skip_channels,
                out_channels,
                3,
                1,
                1,
                true,
            )?,
            deep_channels,
            skip_channels,
            out_channels,
        })
    }

    pub fn forward(&self, deep: &Tensor, skip: Option<&Tensor>, mode: Mode) -> Result<Tensor> {
        let up = upsample2x(deep)?;
        let x = match skip {
            Some(s) => {
                let (_, _, h, w) = up.dims4()?;
                let (_, _, sh, sw) = s.dims4()?;
                if (h, w) != (sh, sw) {
                    return Err(Error::ShapeMismatch(format!(
                        "skip is {sh}x{sw} but upsampled features are {h}x{w}"
                    )));
                }
                Tensor::cat(&[&up, s], 1)?
            }
            None => up,
        };
        Ok(self.conv.forward(&x, mode)?.relu()?)
    }
}

/// Four skip-connected stages back to stride 2, then one more upsampling
/// stage to full resolution.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub stages: Vec<DecoderStage>,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, encoder_channels: [usize; 5], channels: &[usize]) -> Result<Self> {
        let mut stages = Vec::with_capacity(5);
        let mut deep = encoder_channels[4];
        for (i, &out) in channels.iter().enumerate() {
            let skip = if i < 4 { encoder_channels[3 - i] } else { 0 };
            stages.push(DecoderStage::new(
                store,
                &format!("decoder.stage{}", i + 1),
                deep,
                skip,
                out,
            )?);
            deep = out;
        }
        Ok(Self { stages })
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().map_or(0, |s| s.out_channels)
    }

    pub fn forward(&self, feats: &[Tensor], mode: Mode) -> Result<Tensor> {
        let mut x = feats[4].clone();
        for (i, stage) in self.stages.iter().enumerate() {
            let skip = if i < 4 { Some(&feats[3 - i]) } else { None };
            x = stage.forward(&x, skip, mode)?;
        }
        Ok(x)
    }
}
