//! Seeded geometric and photometric augmentation of training patches.
//!
//! Geometric transforms are drawn once per sample and applied to the pre
//! image, the post image and the labels alike. Photometric transforms touch
//! only the images, and by default are drawn separately for pre and post to
//! mimic acquisition differences between the two dates.

mod geometric;
mod photometric;

pub use geometric::{apply_geometric, apply_geometric_draw, draw_geometric, AffineParams, FlipMode, GeometricDraw};
pub use photometric::{
    apply_photometric, apply_photometric_draw, draw_photometric, ColorOp, PhotometricDraw, QualityOp, ToneOp, SEPIA,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::PatchSample;

/// Closed interval `[lo, hi]`.
pub type Range = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub flip_prob: f64,
    pub affine_prob: f64,
    /// Translation as a fraction of the patch size, per axis.
    pub shift_range: Range,
    pub scale_range: Range,
    /// Degrees.
    pub rotate_range: Range,
    /// Firing probability of each photometric block.
    pub block_prob: f64,
    pub rgb_shift_range: Range,
    pub brightness_contrast_range: Range,
    /// Percent of a unit exponent.
    pub gamma_range: Range,
    /// Odd blur kernel sizes are drawn from this interval.
    pub blur_kernel_range: [usize; 2],
    pub downscale_factor: f64,
    pub grid_distort_range: Range,
    pub grid_cells: usize,
    /// Draw photometric parameters separately for pre and post images.
    pub independent_photometric: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            affine_prob: 0.5,
            shift_range: [-0.0625, 0.0625],
            scale_range: [0.9, 1.1],
            rotate_range: [-45.0, 45.0],
            block_prob: 0.5,
            rgb_shift_range: [-20.0, 20.0],
            brightness_contrast_range: [-0.2, 0.2],
            gamma_range: [80.0, 120.0],
            blur_kernel_range: [3, 7],
            downscale_factor: 0.25,
            grid_distort_range: [-0.3, 0.3],
            grid_cells: 5,
            independent_photometric: true,
        }
    }
}

impl AugmentationConfig {
    /// Every probability zero: augmentation is the identity.
    pub fn disabled() -> Self {
        Self {
            flip_prob: 0.0,
            affine_prob: 0.0,
            block_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("affine_prob", self.affine_prob),
            ("block_prob", self.block_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        for (name, r) in [
            ("shift_range", self.shift_range),
            ("scale_range", self.scale_range),
            ("rotate_range", self.rotate_range),
            ("rgb_shift_range", self.rgb_shift_range),
            ("brightness_contrast_range", self.brightness_contrast_range),
            ("gamma_range", self.gamma_range),
            ("grid_distort_range", self.grid_distort_range),
        ] {
            if !(r[0] <= r[1]) {
                return Err(Error::InvalidArgument(format!("{name} is empty: {r:?}")));
            }
        }
        if self.scale_range[0] <= 0.0 || self.gamma_range[0] <= 0.0 {
            return Err(Error::InvalidArgument("scale and gamma must stay positive".into()));
        }
        let [k0, k1] = self.blur_kernel_range;
        if k0 < 1 || k0 > k1 || (k0..=k1).all(|k| k % 2 == 0) {
            return Err(Error::InvalidArgument(format!(
                "blur_kernel_range {:?} holds no odd size",
                self.blur_kernel_range
            )));
        }
        if !(self.downscale_factor > 0.0 && self.downscale_factor <= 1.0) {
            return Err(Error::InvalidArgument("downscale_factor must lie in (0, 1]".into()));
        }
        if self.grid_cells == 0 || self.grid_distort_range[0] <= -1.0 {
            return Err(Error::InvalidArgument(
                "grid distortion must keep cells positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything drawn for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationTrace {
    pub geometric: GeometricDraw,
    pub pre: PhotometricDraw,
    pub post: PhotometricDraw,
}

/// Draws the full parameter set for one sample without touching pixels.
pub fn draw_augmentation<R: Rng + ?Sized>(cfg: &AugmentationConfig, rng: &mut R) -> AugmentationTrace {
    let geometric = draw_geometric(cfg, rng);
    let pre = draw_photometric(cfg, rng);
    let post = if cfg.independent_photometric {
        draw_photometric(cfg, rng)
    } else {
        pre.clone()
    };
    AugmentationTrace { geometric, pre, post }
}

pub fn apply_trace(sample: &PatchSample, trace: &AugmentationTrace) -> PatchSample {
    let mut out = apply_geometric_draw(sample, &trace.geometric);
    out.pre = apply_photometric_draw(&out.pre, &trace.pre);
    out.post = apply_photometric_draw(&out.post, &trace.post);
    out
}

/// Geometric transform shared by all layers, then photometric transforms
/// on the two images.
pub fn augment_sample<R: Rng + ?Sized>(sample: &PatchSample, cfg: &AugmentationConfig, rng: &mut R) -> PatchSample {
    augment_sample_traced(sample, cfg, rng).0
}

pub fn augment_sample_traced<R: Rng + ?Sized>(
    sample: &PatchSample,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> (PatchSample, AugmentationTrace) {
    let trace = draw_augmentation(cfg, rng);
    (apply_trace(sample, &trace), trace)
}

/// Per-sample generator: `base_seed XOR sample_index`.
pub fn sample_rng(base_seed: u64, sample_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base_seed ^ sample_index)
}
