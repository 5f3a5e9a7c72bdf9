//! Generated scenes with known damage, for smoke tests and desk-scale runs.
//!
//! Buildings are axis-aligned rectangles on a textured background, one per
//! grid cell at most. The post image repaints a building according to its
//! damage grade; labels come from the same rectangles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{
    rasterize_labels, BuildingFootprint, DamageLabel, DamagePoint, FootprintLayer, GeoRaster, GeoTransform, LabelMask,
    LabeledFootprint, LabeledFootprintSet, PointLayer, Polygon, RasterGrid,
};
use crate::image::{to_u8, RgbImage};
use crate::sampling::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Side of the placement cells; at most one building per cell.
    pub cell: usize,
    pub occupancy: f64,
    pub min_side: usize,
    pub max_side: usize,
    /// Relative frequency of the four damage grades.
    pub class_weights: [f64; 4],
    /// Share of buildings that get no damage point.
    pub unlabeled_fraction: f64,
    /// Ground sampling distance in meters.
    pub resolution: f64,
    pub crs: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            width: 2048,
            height: 2048,
            seed: 7,
            cell: 64,
            occupancy: 0.6,
            min_side: 14,
            max_side: 40,
            class_weights: [0.4, 0.2, 0.2, 0.2],
            unlabeled_fraction: 0.05,
            resolution: 0.5,
            crs: "EPSG:32637".into(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < self.cell || self.height < self.cell || self.cell == 0 {
            return Err(Error::InvalidArgument("scene must hold at least one cell".into()));
        }
        if self.min_side == 0 || self.min_side > self.max_side || self.max_side + 4 > self.cell {
            return Err(Error::InvalidArgument(format!(
                "building sides {}..={} do not fit cells of {}",
                self.min_side, self.max_side, self.cell
            )));
        }
        if self.class_weights.iter().any(|w| !(*w >= 0.0)) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument(
                "class weights must be non-negative with a positive sum".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.occupancy) || !(0.0..=1.0).contains(&self.unlabeled_fraction) {
            return Err(Error::InvalidArgument(
                "occupancy and unlabeled_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One generated building in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticBuilding {
    pub id: i64,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub damage: DamageLabel,
    /// Whether a damage point was emitted for it.
    pub labeled: bool,
}

pub struct SyntheticScene {
    pub pre: GeoRaster,
    pub post: GeoRaster,
    /// Four-class truth rasterized from the labeled buildings.
    pub labels: LabelMask,
    pub buildings: Vec<SyntheticBuilding>,
    pub footprints: FootprintLayer,
    pub points: PointLayer,
}

impl SyntheticScene {
    pub fn grid(&self) -> &RasterGrid {
        self.pre.grid()
    }

    pub fn scene(&self) -> Result<Scene> {
        Scene::new(self.pre.clone(), self.post.clone(), self.labels.clone())
    }

    pub fn into_scene(self) -> Result<Scene> {
        Scene::new(self.pre, self.post, self.labels)
    }
}

fn pick_damage(rng: &mut ChaCha8Rng, weights: &[f64; 4]) -> DamageLabel {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return DamageLabel::ALL[i];
        }
        u -= w;
    }
    DamageLabel::Destroyed
}

const ROOFS: [[f64; 3]; 4] = [
    [190.0, 190.0, 195.0],
    [175.0, 95.0, 75.0],
    [140.0, 150.0, 165.0],
    [210.0, 200.0, 170.0],
];

/// Low-frequency background field from a handful of random plane waves.
struct Terrain {
    waves: Vec<(f64, f64, f64, [f64; 3])>,
}

impl Terrain {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..6)
            .map(|_| {
                let kx = rng.random_range(-0.03..0.03);
                let ky = rng.random_range(-0.03..0.03);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = [
                    rng.random_range(4.0..14.0),
                    rng.random_range(4.0..14.0),
                    rng.random_range(2.0..10.0),
                ];
                (kx, ky, phase, amp)
            })
            .collect();
        Self { waves }
    }

    fn at(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = [105.0, 115.0, 85.0];
        for &(kx, ky, ph, amp) in &self.waves {
            let s = (kx * x + ky * y + ph).sin();
            for k in 0..3 {
                c[k] += amp[k] * s;
            }
        }
        c
    }
}

/// Builds a scene deterministically from `cfg`.
pub fn generate_scene(cfg: &SyntheticConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.width, cfg.height);
    let terrain = Terrain::new(&mut rng);

    let mut buildings = Vec::new();
    let mut next_id = 1;
    for cy in 0..h / cfg.cell {
        for cx in 0..w / cfg.cell {
            if !rng.random_bool(cfg.occupancy) {
                continue;
            }
            let bw = rng.random_range(cfg.min_side..=cfg.max_side);
            let bh = rng.random_range(cfg.min_side..=cfg.max_side);
            let x = cx * cfg.cell + rng.random_range(2..=cfg.cell - bw - 2);
            let y = cy * cfg.cell + rng.random_range(2..=cfg.cell - bh - 2);
            let damage = pick_damage(&mut rng, &cfg.class_weights);
            let labeled = !rng.random_bool(cfg.unlabeled_fraction);
            buildings.push(SyntheticBuilding {
                id: next_id,
                x,
                y,
                w: bw,
                h: bh,
                damage,
                labeled,
            });
            next_id += 1;
        }
    }

    let mut pre = RgbImage::new(w, h);
    let mut post = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let base = terrain.at(x as f64, y as f64);
            let mut a = [0u8; 3];
            let mut b = [0u8; 3];
            let n1 = rng.random_range(-10.0..10.0);
            let n2 = rng.random_range(-10.0..10.0);
            for k in 0..3 {
                a[k] = to_u8(base[k] + n1);
                // Slightly different illumination on the second date.
                b[k] = to_u8(base[k] * 1.04 + 3.0 + n2);
            }
            pre.put_pixel(x, y, a);
            post.put_pixel(x, y, b);
        }
    }

    for bld in &buildings {
        let roof = ROOFS[rng.random_range(0..ROOFS.len())];
        for y in bld.y..bld.y + bld.h {
            for x in bld.x..bld.x + bld.w {
                let edge = x == bld.x || y == bld.y || x + 1 == bld.x + bld.w || y + 1 == bld.y + bld.h;
                let shade = if edge { 0.7 } else { 1.0 };
                let n = rng.random_range(-6.0..6.0);
                let px = roof.map(|c| c * shade + n);
                pre.put_pixel(x, y, px.map(to_u8));
                let after = match bld.damage {
                    DamageLabel::NoDamage => px.map(|c| c * 1.04 + 3.0 + rng.random_range(-4.0..4.0)),
                    DamageLabel::ModerateDamage => {
                        // Tarpaulin-like tint with scattered holes.
                        if rng.random_bool(0.2) {
                            [45.0, 40.0, 40.0]
                        } else {
                            [px[0] * 0.5 + 30.0, px[1] * 0.5 + 70.0, px[2] * 0.5 + 120.0]
                        }
                    }
                    DamageLabel::SevereDamage => {
                        let v = rng.random_range(25.0..55.0);
                        [v + 5.0, v, v - 5.0]
                    }
                    DamageLabel::Destroyed => {
                        let v = rng.random_range(60.0..220.0);
                        [v, v * 0.95, v * 0.85]
                    }
                };
                post.put_pixel(x, y, after.map(to_u8));
            }
        }
    }

    let transform = GeoTransform::north_up(500_000.0, 5_200_000.0 + h as f64 * cfg.resolution, cfg.resolution);
    let grid = RasterGrid {
        width: w,
        height: h,
        transform,
        crs: Some(cfg.crs.clone()),
    };

    let mut footprints = Vec::with_capacity(buildings.len());
    let mut points = Vec::new();
    let mut entries = Vec::with_capacity(buildings.len());
    for bld in &buildings {
        let (x0, y0) = transform.pixel_to_world(bld.x as f64, bld.y as f64);
        let (x1, y1) = transform.pixel_to_world((bld.x + bld.w) as f64, (bld.y + bld.h) as f64);
        let fp = BuildingFootprint::new(bld.id, Polygon::rect(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))?);
        if bld.labeled {
            let c = fp.barycentre;
            points.push(DamagePoint::new(c.x, c.y, bld.damage));
        }
        entries.push(LabeledFootprint {
            footprint: fp.clone(),
            label: bld.labeled.then_some(bld.damage),
        });
        footprints.push(fp);
    }
    let set = LabeledFootprintSet {
        crs: Some(cfg.crs.clone()),
        entries,
        unassigned_points: 0,
    };
    let labels = rasterize_labels(&set, &grid)?;

    Ok(SyntheticScene {
        pre: GeoRaster::from_rgb(grid.clone(), pre)?,
        post: GeoRaster::from_rgb(grid, post)?,
        labels,
        buildings,
        footprints: FootprintLayer {
            crs: Some(cfg.crs.clone()),
            footprints,
        },
        points: PointLayer {
            crs: Some(cfg.crs.clone()),
            points,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{assign_point_labels, DEFAULT_BUFFER_M, UNLABELED};

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            width: 256,
            height: 192,
            cell: 64,
            occupancy: 1.0,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn labels_match_building_rectangles() {
        let s = generate_scene(&small()).unwrap();
        assert_eq!(s.buildings.len(), 12);
        for b in &s.buildings {
            let want = if b.labeled { b.damage.code() } else { UNLABELED };
            assert_eq!(s.labels.get(b.x, b.y), want);
            assert_eq!(s.labels.get(b.x + b.w - 1, b.y + b.h - 1), want);
            assert_eq!(s.labels.get(b.x - 1, b.y), UNLABELED);
            assert_eq!(s.labels.get(b.x + b.w, b.y + b.h), UNLABELED);
        }
    }

    #[test]
    fn points_reassign_to_the_same_mask() {
        let s = generate_scene(&small()).unwrap();
        let set = assign_point_labels(&s.footprints, &s.points, DEFAULT_BUFFER_M).unwrap();
        assert_eq!(rasterize_labels(&set, s.grid()).unwrap(), s.labels);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_scene(&small()).unwrap();
        let b = generate_scene(&small()).unwrap();
        assert_eq!(a.post, b.post);
        let c = generate_scene(&SyntheticConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.pre, c.pre);
    }

    #[test]
    fn undamaged_roofs_barely_change() {
        let s = generate_scene(&small()).unwrap();
        for b in s.buildings.iter().filter(|b| b.damage == DamageLabel::NoDamage) {
            let (cx, cy) = (b.x + b.w / 2, b.y + b.h / 2);
            let p = s.pre.rgb(cx, cy);
            let q = s.post.rgb(cx, cy);
            for k in 0..3 {
                assert!((p[k] as i32 - q[k] as i32).abs() < 25);
            }
        }
    }
}
