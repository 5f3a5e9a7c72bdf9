//! Siamese U-Net with interchangeable encoder blocks and a pointwise fusion
//! head.

mod blocks;
mod checkpoint;
mod decoder;
mod encoder;
mod layers;
mod params;

pub use blocks::{BottleneckKind, BottleneckSe, DpnBlock, ResNetBlock, SeModule};
pub use checkpoint::{
    encode_checkpoint, import_checkpoint, parse_checkpoint, parse_name_table, parse_tensors, read_checkpoint,
    save_checkpoint, Checkpoint, ImportReport, NameTable, CHECKPOINT_FORMAT,
};
pub use decoder::{Decoder, DecoderStage};
pub use encoder::{Encoder, Stage};
pub use layers::{
    log_softmax_channels, sigmoid, softmax_channels, upsample2x, BatchNorm, Conv2d, ConvBn, Linear, Mode,
};
pub use params::{Init, ParamStore};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    ResNet,
    SeResNeXt,
    SeNet,
    #[serde(rename = "dpn")]
    DualPathNet,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [
        EncoderKind::ResNet,
        EncoderKind::SeResNeXt,
        EncoderKind::SeNet,
        EncoderKind::DualPathNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::ResNet => "resnet",
            EncoderKind::SeResNeXt => "seresnext",
            EncoderKind::SeNet => "senet",
            EncoderKind::DualPathNet => "dpn",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "resnet" => Ok(EncoderKind::ResNet),
            "seresnext" => Ok(EncoderKind::SeResNeXt),
            "senet" => Ok(EncoderKind::SeNet),
            "dpn" | "dualpathnet" => Ok(EncoderKind::DualPathNet),
            other => Err(Error::InvalidArgument(format!("unknown encoder {other:?}"))),
        }
    }
}

/// Architecture hyper-parameters. `stage_channels` are base widths: the
/// output of a stage is the base width for ResNet blocks, four times it for
/// the SE bottlenecks, and residual plus dense channels for dual-path
/// blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub in_channels: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub se_reduction: usize,
    /// Upper bound on the 3x3 group count; the effective count divides the width.
    pub groups: usize,
    /// Initial dense width = residual width / this.
    pub dpn_dense_divisor: usize,
    /// Dense growth per block = residual width / this.
    pub dpn_growth_divisor: usize,
    /// Five entries: four skip-connected stages and the full-resolution one.
    pub decoder_channels: Vec<usize>,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::ResNet,
            in_channels: 3,
            stage_channels: vec![16, 24, 32, 48, 64],
            blocks_per_stage: vec![1; 5],
            se_reduction: 16,
            groups: 32,
            dpn_dense_divisor: 4,
            dpn_growth_divisor: 4,
            decoder_channels: vec![64, 32, 16, 8, 8],
            num_classes: 3,
        }
    }
}

impl ModelConfig {
    pub fn new(encoder: EncoderKind, num_classes: usize) -> Self {
        Self {
            encoder,
            num_classes,
            ..Self::default()
        }
    }

    /// Narrow configuration for tests and quick experiments.
    pub fn tiny(encoder: EncoderKind, num_classes: usize) -> Self {
        Self {
            encoder,
            num_classes,
            stage_channels: vec![4, 8, 8, 8, 8],
            se_reduction: 2,
            groups: 2,
            decoder_channels: vec![8, 8, 8, 4, 4],
            ..Self::default()
        }
    }

    /// Widths in the range of the open-source models this family derives from.
    pub fn full_scale(encoder: EncoderKind, num_classes: usize) -> Self {
        Self {
            encoder,
            num_classes,
            stage_channels: vec![64, 64, 128, 256, 512],
            blocks_per_stage: vec![1, 2, 2, 2, 2],
            decoder_channels: vec![256, 128, 64, 32, 16],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.stage_channels.len() != 5 || self.blocks_per_stage.len() != 5 {
            return bad(format!(
                "encoder needs 5 stages, got {} widths and {} block counts",
                self.stage_channels.len(),
                self.blocks_per_stage.len()
            ));
        }
        if self.decoder_channels.len() != 5 {
            return bad(format!("decoder needs 5 widths, got {}", self.decoder_channels.len()));
        }
        if self
            .stage_channels
            .iter()
            .chain(&self.decoder_channels)
            .chain(&self.blocks_per_stage)
            .any(|&c| c == 0)
        {
            return bad("widths and block counts must be positive".into());
        }
        if !(2..=4).contains(&self.num_classes) {
            return bad(format!("num_classes must be 2, 3 or 4, got {}", self.num_classes));
        }
        if self.in_channels == 0 || self.se_reduction == 0 || self.groups == 0 {
            return bad("in_channels, se_reduction and groups must be positive".into());
        }
        if self.encoder == EncoderKind::DualPathNet {
            for s in 0..5 {
                let (r, d, g) = self.dpn_widths(s);
                if r == 0 || d == 0 || g == 0 {
                    return bad(format!("dual-path widths vanish at stage {}", s + 1));
                }
            }
        }
        Ok(())
    }

    /// `(residual, initial dense, growth)` of a dual-path stage.
    pub fn dpn_widths(&self, stage: usize) -> (usize, usize, usize) {
        let r = 4 * self.stage_channels[stage];
        (r, r / self.dpn_dense_divisor.max(1), r / self.dpn_growth_divisor.max(1))
    }
}

/// Siamese U-Net. Pre and post images share every encoder and decoder
/// weight; their final feature maps are concatenated and classified per
/// pixel by a 1x1 convolution.
#[derive(Debug)]
pub struct SegmentationModel {
    config: ModelConfig,
    store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub head: Conv2d,
}

impl SegmentationModel {
    pub fn new(config: &ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        Self::build(config, ParamStore::new(seed, dtype, device))
    }

    /// Shape-only model for counting parameters; cannot run forward passes.
    pub fn shape_only(config: &ModelConfig) -> Result<Self> {
        Self::build(config, ParamStore::shape_only())
    }

    fn build(config: &ModelConfig, mut store: ParamStore) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(&mut store, config)?;
        let decoder = Decoder::new(&mut store, encoder.out_channels(), &config.decoder_channels)?;
        let head = Conv2d::new(
            &mut store,
            "head",
            2 * decoder.out_channels(),
            config.num_classes,
            1,
            1,
            1,
            true,
        )?;
        Ok(Self {
            config: config.clone(),
            store,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_parameters()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Shared encoder-decoder applied to one batch of images.
    pub fn branch_features(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let feats = self.encoder.forward(x, mode)?;
        self.decoder.forward(&feats, mode)
    }

    /// Per-pixel class logits `(N, num_classes, H, W)` for `(N, 3, H, W)`
    /// inputs whose sides are multiples of 32.
    pub fn forward(&self, pre: &Tensor, post: &Tensor, mode: Mode) -> Result<Tensor> {
        if self.store.is_shape_only() {
            return Err(Error::InvalidArgument("shape-only model cannot run".into()));
        }
        if pre.dims() != post.dims() {
            return Err(Error::ShapeMismatch(format!(
                "pre {:?} and post {:?} differ",
                pre.dims(),
                post.dims()
            )));
        }
        let (n, c, h, w) = pre.dims4()?;
        if c != self.config.in_channels || h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "input must be (N, {}, 32k, 32m), got {:?}",
                self.config.in_channels,
                pre.dims()
            )));
        }
        // Both dates go through the network as one batch.
        let both = Tensor::cat(&[pre, post], 0)?;
        let f = self.branch_features(&both, mode)?;
        let fused = Tensor::cat(&[&f.narrow(0, 0, n)?, &f.narrow(0, n, n)?], 1)?;
        self.head.forward(&fused, mode)
    }
}

/// Pixel scaling applied to every network input.
pub const INPUT_MEAN: f64 = 127.5;
pub const INPUT_SCALE: f64 = 1.0 / 64.0;

/// Stacks images into a normalised `(N, 3, H, W)` tensor.
pub fn images_to_tensor(images: &[&RgbImage], dtype: DType, device: &Device) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::InvalidArgument("no images to stack".into()));
    };
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if (img.width(), img.height()) != (w, h) {
            return Err(Error::ShapeMismatch("images in a batch differ in size".into()));
        }
        let raw = img.as_raw();
        for c in 0..3 {
            data.extend(
                raw.iter()
                    .skip(c)
                    .step_by(3)
                    .map(|&v| ((v as f64 - INPUT_MEAN) * INPUT_SCALE) as f32),
            );
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), device)?.to_dtype(dtype)?)
}
