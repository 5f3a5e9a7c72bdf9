//! Leave-one-quarter-out fold construction and overlapping patch tiling.

mod manifest;

pub use manifest::{parse_manifest, write_manifest, Manifest, ManifestHeader};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{GeoRaster, LabelMask};
use crate::image::RgbImage;

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub const fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn from_origin(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn intersects(&self, other: &PixelRect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn contains_rect(&self, other: &PixelRect) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// One LOQO fold: the quarter held out for testing plus the scene extent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold_index: usize,
    pub test_quarter: PixelRect,
    pub scene: PixelRect,
    pub quarters: [PixelRect; 4],
}

impl FoldSpec {
    /// The three quarters used for training.
    pub fn train_quarters(&self) -> Vec<PixelRect> {
        self.quarters
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.fold_index)
            .map(|(_, q)| *q)
            .collect()
    }
}

/// Splits the scene at `(width / 2, height / 2)` into four quarters in
/// reading order; fold `k` holds out quarter `k`.
pub fn quarter_split(scene_width: usize, scene_height: usize) -> Result<Vec<FoldSpec>> {
    if scene_width < 2 || scene_height < 2 {
        return Err(Error::InvalidArgument(format!(
            "scene {scene_width}x{scene_height} is too small to split into quarters"
        )));
    }
    let (mx, my) = (scene_width / 2, scene_height / 2);
    let quarters = [
        PixelRect::new(0, 0, mx, my),
        PixelRect::new(mx, 0, scene_width, my),
        PixelRect::new(0, my, mx, scene_height),
        PixelRect::new(mx, my, scene_width, scene_height),
    ];
    let scene = PixelRect::new(0, 0, scene_width, scene_height);
    Ok((0..4)
        .map(|k| FoldSpec {
            fold_index: k,
            test_quarter: quarters[k],
            scene,
            quarters,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingConfig {
    pub patch_size: usize,
    pub stride: usize,
    /// Training patches with a smaller labeled-pixel fraction are dropped.
    pub min_labeled_fraction: f64,
    /// Training patches with a smaller valid-pixel fraction are dropped.
    pub min_valid_fraction: f64,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            patch_size: 1024,
            stride: 64,
            min_labeled_fraction: 0.0,
            min_valid_fraction: 0.0,
        }
    }
}

impl TilingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.stride == 0 || self.stride > self.patch_size {
            return Err(Error::InvalidArgument(format!(
                "need 0 < stride <= patch_size, got stride {} patch {}",
                self.stride, self.patch_size
            )));
        }
        for (name, v) in [
            ("min_labeled_fraction", self.min_labeled_fraction),
            ("min_valid_fraction", self.min_valid_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Patch offsets along one axis: a regular stride grid plus one final
/// offset snapped to the far edge when the grid stops short of it.
pub fn axis_origins(start: usize, len: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if len < patch {
        return Err(Error::InvalidArgument(format!(
            "region length {len} is smaller than patch size {patch}"
        )));
    }
    let end = start + len;
    let mut out: Vec<usize> = (0..)
        .map(|i| start + i * stride)
        .take_while(|o| o + patch <= end)
        .collect();
    let last = *out.last().expect("at least one origin");
    if last + patch < end {
        out.push(end - patch);
    }
    Ok(out)
}

/// Row-major patch origins covering `region`.
pub fn patch_origins(region: &PixelRect, cfg: &TilingConfig) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    let xs = axis_origins(region.x0, region.width(), cfg.patch_size, cfg.stride)?;
    let ys = axis_origins(region.y0, region.height(), cfg.patch_size, cfg.stride)?;
    Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect())
}

/// Co-registered pre/post rasters with their label mask and an optional
/// validity mask (no-data pixels are `false`).
#[derive(Debug, Clone)]
pub struct Scene {
    pub pre: GeoRaster,
    pub post: GeoRaster,
    pub labels: LabelMask,
    pub valid: Option<Vec<bool>>,
}

impl Scene {
    pub fn new(pre: GeoRaster, post: GeoRaster, labels: LabelMask) -> Result<Self> {
        if pre.width() != post.width() || pre.height() != post.height() {
            return Err(Error::ShapeMismatch(format!(
                "pre {}x{} vs post {}x{}",
                pre.width(),
                pre.height(),
                post.width(),
                post.height()
            )));
        }
        if labels.width() != pre.width() || labels.height() != pre.height() {
            return Err(Error::ShapeMismatch("label mask does not match the rasters".into()));
        }
        if pre.transform() != post.transform() {
            return Err(Error::ShapeMismatch(
                "pre and post rasters are not co-registered".into(),
            ));
        }
        crate::geodata::assign_check_crs(pre.crs(), post.crs())?;
        Ok(Self {
            pre,
            post,
            labels,
            valid: None,
        })
    }

    pub fn with_valid(mut self, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != self.width() * self.height() {
            return Err(Error::ShapeMismatch("validity mask does not match the scene".into()));
        }
        self.valid = Some(valid);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.pre.width()
    }

    pub fn height(&self) -> usize {
        self.pre.height()
    }

    pub fn extent(&self) -> PixelRect {
        PixelRect::new(0, 0, self.width(), self.height())
    }

    fn labeled_fraction(&self, r: &PixelRect) -> f64 {
        let mut n = 0usize;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                if self.labels.get(x, y) != crate::geodata::UNLABELED {
                    n += 1;
                }
            }
        }
        n as f64 / r.area() as f64
    }

    fn valid_fraction(&self, r: &PixelRect) -> f64 {
        let Some(valid) = &self.valid else {
            return 1.0;
        };
        let w = self.width();
        let n: usize = (r.y0..r.y1)
            .map(|y| valid[y * w + r.x0..y * w + r.x1].iter().filter(|&&v| v).count())
            .sum();
        n as f64 / r.area() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Location of one patch; the pixels are re-extracted from the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRecord {
    pub fold: usize,
    pub split: Split,
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

impl PatchRecord {
    pub fn rect(&self) -> PixelRect {
        PixelRect::from_origin(self.x, self.y, self.size, self.size)
    }

    pub fn extract(&self, scene: &Scene) -> PatchSample {
        let mut s = extract_one(scene, self.x, self.y, self.size);
        s.fold = Some(self.fold);
        s
    }
}

/// Aligned pre/post/label windows of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub pre: RgbImage,
    pub post: RgbImage,
    pub labels: LabelMask,
    pub origin: (usize, usize),
    pub fold: Option<usize>,
}

fn extract_one(scene: &Scene, x: usize, y: usize, size: usize) -> PatchSample {
    PatchSample {
        pre: scene.pre.crop_rgb(x, y, size, size),
        post: scene.post.crop_rgb(x, y, size, size),
        labels: scene.labels.crop(x, y, size, size),
        origin: (x, y),
        fold: None,
    }
}

fn check_region(scene: &Scene, region: &PixelRect) -> Result<()> {
    if !scene.extent().contains_rect(region) || region.area() == 0 {
        return Err(Error::InvalidArgument(format!(
            "region {region:?} lies outside the {}x{} scene",
            scene.width(),
            scene.height()
        )));
    }
    Ok(())
}

/// Patch records tiling `region`, after the labeled/valid fraction filters.
pub fn plan_patches(
    scene: &Scene,
    region: &PixelRect,
    cfg: &TilingConfig,
    fold: usize,
    split: Split,
    apply_filters: bool,
) -> Result<Vec<PatchRecord>> {
    check_region(scene, region)?;
    let origins = patch_origins(region, cfg)?;
    Ok(origins
        .into_iter()
        .map(|(x, y)| PatchRecord {
            fold,
            split,
            x,
            y,
            size: cfg.patch_size,
        })
        .filter(|r| {
            if !apply_filters {
                return true;
            }
            let rect = r.rect();
            (cfg.min_labeled_fraction == 0.0 || scene.labeled_fraction(&rect) >= cfg.min_labeled_fraction)
                && (cfg.min_valid_fraction == 0.0 || scene.valid_fraction(&rect) >= cfg.min_valid_fraction)
        })
        .collect())
}

/// Every patch of `region` that passes the configured filters, extracted
/// lazily one at a time.
pub fn extract_patches<'a>(
    scene: &'a Scene,
    region: &PixelRect,
    cfg: &TilingConfig,
) -> Result<impl ExactSizeIterator<Item = PatchSample> + 'a> {
    Ok(plan_patches(scene, region, cfg, 0, Split::Train, true)?
        .into_iter()
        .map(move |r| extract_one(scene, r.x, r.y, r.size)))
}

/// Train and test patch records of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldDataset {
    pub fold: FoldSpec,
    pub train: Vec<PatchRecord>,
    pub test: Vec<PatchRecord>,
}

impl FoldDataset {
    /// Fails if any training patch touches the held-out quarter.
    pub fn check_disjoint(&self) -> Result<()> {
        for r in &self.train {
            if r.rect().intersects(&self.fold.test_quarter) {
                return Err(Error::TestLeakage {
                    fold: self.fold.fold_index,
                    x: r.x,
                    y: r.y,
                    size: r.size,
                });
            }
        }
        Ok(())
    }
}

/// Builds per-fold datasets. Each training quarter is tiled on its own, so
/// no training patch straddles into the test quarter; the test quarter is
/// tiled completely with no filtering.
pub fn build_fold_datasets(scene: &Scene, folds: &[FoldSpec], cfg: &TilingConfig) -> Result<Vec<FoldDataset>> {
    folds
        .iter()
        .map(|fold| {
            let mut train = Vec::new();
            for q in fold.train_quarters() {
                train.extend(plan_patches(scene, &q, cfg, fold.fold_index, Split::Train, true)?);
            }
            let test = plan_patches(scene, &fold.test_quarter, cfg, fold.fold_index, Split::Test, false)?;
            let ds = FoldDataset {
                fold: fold.clone(),
                train,
                test,
            };
            ds.check_disjoint()?;
            Ok(ds)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{GeoTransform, RasterGrid};

    pub(crate) fn blank_scene(w: usize, h: usize) -> Scene {
        let grid = RasterGrid {
            width: w,
            height: h,
            transform: GeoTransform::north_up(0.0, h as f64, 1.0),
            crs: None,
        };
        let pre = GeoRaster::new(grid.clone(), 3, vec![0; w * h * 3]).unwrap();
        let post = pre.clone();
        Scene::new(pre, post, LabelMask::unlabeled(w, h)).unwrap()
    }

    #[test]
    fn quarters_of_even_and_odd_scenes() {
        let f = quarter_split(100, 80).unwrap();
        let q: Vec<_> = f.iter().map(|f| f.test_quarter).collect();
        assert_eq!(
            q,
            vec![
                PixelRect::new(0, 0, 50, 40),
                PixelRect::new(50, 0, 100, 40),
                PixelRect::new(0, 40, 50, 80),
                PixelRect::new(50, 40, 100, 80)
            ]
        );
        let f = quarter_split(101, 81).unwrap();
        assert_eq!(f[3].test_quarter, PixelRect::new(50, 40, 101, 81));
        assert_eq!(f.iter().map(|f| f.test_quarter.area()).sum::<usize>(), 101 * 81);
        assert!(quarter_split(1, 10).is_err());
    }

    #[test]
    fn origins_with_snapping() {
        assert_eq!(axis_origins(0, 1024, 1024, 64).unwrap(), vec![0]);
        assert_eq!(axis_origins(0, 1100, 1024, 64).unwrap(), vec![0, 64, 76]);
        assert_eq!(axis_origins(0, 2048, 1024, 64).unwrap().len(), 17);
        assert_eq!(axis_origins(10, 30, 10, 10).unwrap(), vec![10, 20, 30]);
        assert!(axis_origins(0, 1000, 1024, 64).is_err());
    }

    #[test]
    fn extract_counts() {
        let scene = blank_scene(1100, 1024);
        let cfg = TilingConfig::default();
        assert_eq!(extract_patches(&scene, &scene.extent(), &cfg).unwrap().len(), 3);
        let one = extract_patches(&scene, &PixelRect::new(0, 0, 1024, 1024), &cfg)
            .unwrap()
            .collect::<Vec<_>>();
        assert_eq!(one.len(), 1);
        assert!(extract_patches(&scene, &PixelRect::new(0, 0, 1000, 1024), &cfg).is_err());
    }

    #[test]
    fn labeled_fraction_filter() {
        let mut scene = blank_scene(8, 4);
        for y in 0..4 {
            for x in 0..4 {
                scene.labels.set(x, y, 1);
            }
        }
        let cfg = TilingConfig {
            patch_size: 4,
            stride: 4,
            min_labeled_fraction: 0.5,
            min_valid_fraction: 0.0,
        };
        let p: Vec<_> = extract_patches(&scene, &scene.extent(), &cfg).unwrap().collect();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].origin, (0, 0));
    }

    #[test]
    fn invalid_tiling_config() {
        let bad = TilingConfig {
            stride: 2048,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
