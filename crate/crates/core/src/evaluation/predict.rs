use candle_core::DType;

use crate::error::{Error, Result};
use crate::geodata::LabelMask;
use crate::model::{images_to_tensor, softmax_channels, Mode, SegmentationModel};
use crate::sampling::{patch_origins, PixelRect, Scene, TilingConfig};

/// Patches per forward pass during prediction.
pub const PREDICT_BATCH: usize = 4;

/// Running per-pixel class-probability sums over a region.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub region: PixelRect,
    pub classes: usize,
    sums: Vec<f64>,
    weights: Vec<u32>,
}

impl ProbabilityMap {
    pub fn new(region: PixelRect, classes: usize) -> Self {
        let n = region.area();
        Self {
            region,
            classes,
            sums: vec![0.0; n * classes],
            weights: vec![0; n],
        }
    }

    /// Adds a `(classes, h, w)` probability block whose top-left corner sits
    /// at scene pixel `(x0, y0)`.
    pub fn accumulate(&mut self, x0: usize, y0: usize, w: usize, h: usize, probs: &[f32]) -> Result<()> {
        let block = PixelRect::from_origin(x0, y0, w, h);
        if probs.len() != self.classes * w * h || !self.region.contains_rect(&block) {
            return Err(Error::ShapeMismatch(format!(
                "probability block {block:?} does not fit region {:?}",
                self.region
            )));
        }
        let rw = self.region.width();
        for y in 0..h {
            for x in 0..w {
                let i = (y0 + y - self.region.y0) * rw + (x0 + x - self.region.x0);
                self.weights[i] += 1;
                for c in 0..self.classes {
                    self.sums[i * self.classes + c] += probs[(c * h + y) * w + x] as f64;
                }
            }
        }
        Ok(())
    }

    /// Mean probability vector at region-relative pixel `(x, y)`.
    pub fn mean(&self, x: usize, y: usize) -> Option<Vec<f64>> {
        let i = y * self.region.width() + x;
        let w = self.weights[i];
        (w > 0).then(|| {
            self.sums[i * self.classes..(i + 1) * self.classes]
                .iter()
                .map(|s| s / w as f64)
                .collect()
        })
    }

    /// Per-pixel argmax (lowest class on ties). Fails on any uncovered pixel.
    pub fn argmax(&self) -> Result<LabelMask> {
        let (w, h) = (self.region.width(), self.region.height());
        let mut data = Vec::with_capacity(w * h);
        for i in 0..w * h {
            if self.weights[i] == 0 {
                return Err(Error::NoData(format!(
                    "pixel ({}, {}) received no prediction",
                    self.region.x0 + i % w,
                    self.region.y0 + i / w
                )));
            }
            let s = &self.sums[i * self.classes..(i + 1) * self.classes];
            let mut best = 0;
            for c in 1..self.classes {
                if s[c] > s[best] {
                    best = c;
                }
            }
            data.push(best as u8);
        }
        LabelMask::from_raw(w, h, data)
    }
}

/// Softmax probabilities of every model on every tile of `region`, summed
/// per pixel. Averaging over models and overlapping tiles happens in
/// [`ProbabilityMap::mean`] and [`ProbabilityMap::argmax`].
pub fn predict_probabilities(
    models: &[&SegmentationModel],
    scene: &Scene,
    region: &PixelRect,
    tiling: &TilingConfig,
) -> Result<ProbabilityMap> {
    let Some(first) = models.first() else {
        return Err(Error::InvalidArgument("no models to predict with".into()));
    };
    let classes = first.config().num_classes;
    if models.iter().any(|m| m.config().num_classes != classes) {
        return Err(Error::InvalidArgument(
            "ensemble members disagree on the class count".into(),
        ));
    }
    if !scene.extent().contains_rect(region) {
        return Err(Error::InvalidArgument(format!("region {region:?} outside the scene")));
    }
    let origins = patch_origins(region, tiling)?;
    let size = tiling.patch_size;
    let mut map = ProbabilityMap::new(*region, classes);
    for chunk in origins.chunks(PREDICT_BATCH) {
        let pre: Vec<_> = chunk
            .iter()
            .map(|&(x, y)| scene.pre.crop_rgb(x, y, size, size))
            .collect();
        let post: Vec<_> = chunk
            .iter()
            .map(|&(x, y)| scene.post.crop_rgb(x, y, size, size))
            .collect();
        for model in models {
            let (dtype, dev) = (model.dtype(), model.device());
            let pre_t = images_to_tensor(&pre.iter().collect::<Vec<_>>(), dtype, dev)?;
            let post_t = images_to_tensor(&post.iter().collect::<Vec<_>>(), dtype, dev)?;
            let probs = softmax_channels(&model.forward(&pre_t, &post_t, Mode::Eval)?)?;
            let probs = probs.to_dtype(DType::F32)?;
            for (b, &(x, y)) in chunk.iter().enumerate() {
                let p = probs.get(b)?.flatten_all()?.to_vec1::<f32>()?;
                map.accumulate(x, y, size, size, &p)?;
            }
        }
    }
    Ok(map)
}

/// Class map of `region` from one model.
pub fn predict_quarter(
    model: &SegmentationModel,
    scene: &Scene,
    region: &PixelRect,
    tiling: &TilingConfig,
) -> Result<LabelMask> {
    predict_probabilities(&[model], scene, region, tiling)?.argmax()
}

/// Class map of `region` from the mean probabilities of several models.
pub fn ensemble_predict(
    models: &[&SegmentationModel],
    scene: &Scene,
    region: &PixelRect,
    tiling: &TilingConfig,
) -> Result<LabelMask> {
    predict_probabilities(models, scene, region, tiling)?.argmax()
}
