//! Raster and vector ingestion, point-to-footprint label transfer, and
//! per-pixel label masks.

mod assign;
mod footprint;
mod geometry;
mod morphology;
mod raster;
mod rasterize;
mod scheme;

pub(crate) use assign::check_crs as assign_check_crs;
pub use assign::{assign_point_labels, DEFAULT_BUFFER_M};
pub use footprint::{
    parse_footprints_geojson, parse_points_csv, parse_points_geojson, read_footprints, read_points,
    write_labeled_geojson, BuildingFootprint, DamagePoint, FootprintId, FootprintLayer, LabeledFootprint,
    LabeledFootprintSet, PointLayer, PointSource,
};
pub use geometry::{Point, Polygon};
pub use morphology::dilate_mask;
pub use raster::{
    decode_geotiff, decode_label_mask, encode_raster, load_label_mask, load_raster, write_label_mask, write_raster,
    GeoRaster, GeoTransform, RasterGrid,
};
pub use rasterize::{footprint_presence, rasterize_labels};
pub use scheme::{merge_classes, ClassScheme};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mask value for pixels that carry no damage label.
pub const UNLABELED: u8 = 255;

/// Damage grade of a building. The declaration order is the severity order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum DamageLabel {
    NoDamage = 0,
    ModerateDamage = 1,
    SevereDamage = 2,
    Destroyed = 3,
}

impl DamageLabel {
    pub const ALL: [DamageLabel; 4] = [
        DamageLabel::NoDamage,
        DamageLabel::ModerateDamage,
        DamageLabel::SevereDamage,
        DamageLabel::Destroyed,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Accepts integer codes and the usual spellings of the four grades.
    pub fn parse(text: &str) -> Option<Self> {
        let t = text.trim();
        if let Ok(code) = t.parse::<u8>() {
            return Self::from_code(code);
        }
        let norm: String = t
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "nodamage" | "none" | "undamaged" => Some(DamageLabel::NoDamage),
            "moderate" | "moderatedamage" => Some(DamageLabel::ModerateDamage),
            "severe" | "severedamage" => Some(DamageLabel::SevereDamage),
            "destroyed" => Some(DamageLabel::Destroyed),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DamageLabel::NoDamage => "No Damage",
            DamageLabel::ModerateDamage => "Moderate Damage",
            DamageLabel::SevereDamage => "Severe Damage",
            DamageLabel::Destroyed => "Destroyed",
        }
    }
}

/// Per-pixel damage codes on a raster grid, row-major. Every value is a
/// damage code (0..=3) or [`UNLABELED`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn unlabeled(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![UNLABELED; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "mask buffer has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 3 && v != UNLABELED) {
            return Err(Error::InvalidArgument(format!("invalid mask value {bad}")));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Panics if `value` is not a valid mask code.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        assert!(value <= 3 || value == UNLABELED, "invalid mask value {value}");
        self.data[y * self.width + x] = value;
    }

    pub fn labeled_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != UNLABELED).count()
    }

    /// Copies the `w`x`h` window at (`x0`, `y0`).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> LabelMask {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
        }
        LabelMask {
            width: w,
            height: h,
            data,
        }
    }

    /// Per-code pixel counts for codes 0..=3, then the unlabeled count.
    pub fn histogram(&self) -> [usize; 5] {
        let mut h = [0usize; 5];
        for &v in &self.data {
            if v == UNLABELED {
                h[4] += 1;
            } else {
                h[v as usize] += 1;
            }
        }
        h
    }
}
