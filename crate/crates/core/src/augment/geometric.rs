use rand::Rng;

use super::AugmentationConfig;
use crate::geodata::{LabelMask, UNLABELED};
use crate::image::{to_u8, RgbImage};
use crate::sampling::PatchSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipMode {
    Horizontal,
    Vertical,
    Both,
}

/// Translation (fraction of patch size), isotropic scale and rotation in
/// degrees, all about the patch center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub shift_x: f64,
    pub shift_y: f64,
    pub scale: f64,
    pub rotate_deg: f64,
}

impl AffineParams {
    pub fn rotation(deg: f64) -> Self {
        Self {
            shift_x: 0.0,
            shift_y: 0.0,
            scale: 1.0,
            rotate_deg: deg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeometricDraw {
    pub flip: Option<FlipMode>,
    pub affine: Option<AffineParams>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

pub fn draw_geometric<R: Rng + ?Sized>(cfg: &AugmentationConfig, rng: &mut R) -> GeometricDraw {
    let flip = rng.random_bool(cfg.flip_prob).then(|| match rng.random_range(0..3) {
        0 => FlipMode::Horizontal,
        1 => FlipMode::Vertical,
        _ => FlipMode::Both,
    });
    let affine = rng.random_bool(cfg.affine_prob).then(|| AffineParams {
        shift_x: uniform(rng, cfg.shift_range),
        shift_y: uniform(rng, cfg.shift_range),
        scale: uniform(rng, cfg.scale_range),
        rotate_deg: uniform(rng, cfg.rotate_range),
    });
    GeometricDraw { flip, affine }
}

pub fn apply_geometric<R: Rng + ?Sized>(sample: &PatchSample, cfg: &AugmentationConfig, rng: &mut R) -> PatchSample {
    apply_geometric_draw(sample, &draw_geometric(cfg, rng))
}

/// Applies the same spatial transform to pre, post and labels. Images are
/// resampled bilinearly with zero fill, labels by nearest neighbour with
/// unlabeled fill.
pub fn apply_geometric_draw(sample: &PatchSample, draw: &GeometricDraw) -> PatchSample {
    let mut out = sample.clone();
    if let Some(mode) = draw.flip {
        out.pre = flip_image(&out.pre, mode);
        out.post = flip_image(&out.post, mode);
        out.labels = flip_mask(&out.labels, mode);
    }
    if let Some(p) = draw.affine {
        let map = InverseAffine::new(&p, out.labels.width(), out.labels.height());
        out.pre = warp_image(&out.pre, &map);
        out.post = warp_image(&out.post, &map);
        out.labels = warp_mask(&out.labels, &map);
    }
    out
}

#[inline]
fn flip_index(x: usize, y: usize, w: usize, h: usize, mode: FlipMode) -> (usize, usize) {
    match mode {
        FlipMode::Horizontal => (w - 1 - x, y),
        FlipMode::Vertical => (x, h - 1 - y),
        FlipMode::Both => (w - 1 - x, h - 1 - y),
    }
}

fn flip_image(img: &RgbImage, mode: FlipMode) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = flip_index(x, y, w, h, mode);
            out.put_pixel(x, y, img.pixel(sx, sy));
        }
    }
    out
}

fn flip_mask(mask: &LabelMask, mode: FlipMode) -> LabelMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = LabelMask::unlabeled(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = flip_index(x, y, w, h, mode);
            out.set(x, y, mask.get(sx, sy));
        }
    }
    out
}

/// Output pixel -> source position.
struct InverseAffine {
    // src = m * (dst - offset) + center
    m: [f64; 4],
    offset: (f64, f64),
    center: (f64, f64),
}

impl InverseAffine {
    fn new(p: &AffineParams, w: usize, h: usize) -> Self {
        let center = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (s, c) = p.rotate_deg.to_radians().sin_cos();
        // Forward: dst = scale * R(theta) * (src - center) + center + shift.
        // Inverse rotation is the transpose.
        let k = 1.0 / p.scale;
        Self {
            m: [c * k, s * k, -s * k, c * k],
            offset: (center.0 + p.shift_x * w as f64, center.1 + p.shift_y * h as f64),
            center,
        }
    }

    #[inline]
    fn source(&self, x: usize, y: usize) -> (f64, f64) {
        let dx = x as f64 - self.offset.0;
        let dy = y as f64 - self.offset.1;
        (
            self.m[0] * dx + self.m[1] * dy + self.center.0,
            self.m[2] * dx + self.m[3] * dy + self.center.1,
        )
    }
}

fn warp_image(img: &RgbImage, map: &InverseAffine) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map.source(x, y);
            let v = img.sample_bilinear(sx, sy);
            out.put_pixel(x, y, [to_u8(v[0]), to_u8(v[1]), to_u8(v[2])]);
        }
    }
    out
}

fn warp_mask(mask: &LabelMask, map: &InverseAffine) -> LabelMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = LabelMask::unlabeled(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map.source(x, y);
            let (nx, ny) = ((sx + 0.5).floor(), (sy + 0.5).floor());
            if nx >= 0.0 && ny >= 0.0 && nx < w as f64 && ny < h as f64 {
                out.set(x, y, mask.get(nx as usize, ny as usize));
            } else {
                out.set(x, y, UNLABELED);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(n: usize, cell: usize) -> PatchSample {
        let mut labels = LabelMask::unlabeled(n, n);
        let mut img = RgbImage::new(n, n);
        for y in 0..n {
            for x in 0..n {
                let c = ((x / cell + y / cell) % 2) as u8;
                labels.set(x, y, c);
                img.put_pixel(x, y, [(x * 4) as u8, (y * 4) as u8, c * 200]);
            }
        }
        PatchSample {
            pre: img.clone(),
            post: img,
            labels,
            origin: (0, 0),
            fold: None,
        }
    }

    #[test]
    fn horizontal_flip_mirrors_every_layer() {
        let s = checker(12, 3);
        let d = GeometricDraw {
            flip: Some(FlipMode::Horizontal),
            affine: None,
        };
        let o = apply_geometric_draw(&s, &d);
        for y in 0..12 {
            for x in 0..12 {
                assert_eq!(o.pre.pixel(x, y), s.pre.pixel(11 - x, y));
                assert_eq!(o.post.pixel(x, y), s.post.pixel(11 - x, y));
                assert_eq!(o.labels.get(x, y), s.labels.get(11 - x, y));
            }
        }
    }

    #[test]
    fn both_flip_is_twice_composed() {
        let s = checker(10, 2);
        let h = apply_geometric_draw(
            &s,
            &GeometricDraw {
                flip: Some(FlipMode::Horizontal),
                affine: None,
            },
        );
        let hv = apply_geometric_draw(
            &h,
            &GeometricDraw {
                flip: Some(FlipMode::Vertical),
                affine: None,
            },
        );
        let both = apply_geometric_draw(
            &s,
            &GeometricDraw {
                flip: Some(FlipMode::Both),
                affine: None,
            },
        );
        assert_eq!(hv, both);
    }

    #[test]
    fn unit_affine_is_identity() {
        let s = checker(16, 4);
        let d = GeometricDraw {
            flip: None,
            affine: Some(AffineParams::rotation(0.0)),
        };
        assert_eq!(apply_geometric_draw(&s, &d), s);
    }

    #[test]
    fn integer_shift_moves_content_and_fills() {
        let s = checker(16, 4);
        let d = GeometricDraw {
            flip: None,
            affine: Some(AffineParams {
                shift_x: 0.25,
                shift_y: 0.0,
                scale: 1.0,
                rotate_deg: 0.0,
            }),
        };
        let o = apply_geometric_draw(&s, &d);
        for y in 0..16 {
            for x in 0..16 {
                if x < 4 {
                    assert_eq!(o.labels.get(x, y), UNLABELED);
                    assert_eq!(o.pre.pixel(x, y), [0, 0, 0]);
                } else {
                    assert_eq!(o.labels.get(x, y), s.labels.get(x - 4, y));
                }
            }
        }
    }

    #[test]
    fn rotation_round_trip_keeps_interior() {
        let n = 64;
        let s = checker(n, 8);
        let rot = |s: &PatchSample, deg| {
            apply_geometric_draw(
                s,
                &GeometricDraw {
                    flip: None,
                    affine: Some(AffineParams::rotation(deg)),
                },
            )
        };
        let back = rot(&rot(&s, 45.0), -45.0);
        let c = (n as f64 - 1.0) / 2.0;
        let (mut agree, mut total) = (0, 0);
        for y in 0..n {
            for x in 0..n {
                if (x as f64 - c).hypot(y as f64 - c) < c * 0.7 {
                    total += 1;
                    agree += (back.labels.get(x, y) == s.labels.get(x, y)) as usize;
                }
            }
        }
        assert!(agree as f64 / total as f64 >= 0.95, "{agree}/{total}");
    }
}
