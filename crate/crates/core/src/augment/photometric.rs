use rand::Rng;

use super::AugmentationConfig;
use crate::image::{to_u8, RgbImage};

/// Standard sepia tone matrix, rows produce r, g, b.
pub const SEPIA: [[f64; 3]; 3] = [[0.393, 0.769, 0.189], [0.349, 0.686, 0.168], [0.272, 0.534, 0.131]];

/// First block: colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorOp {
    RgbShift([f64; 3]),
    Grayscale,
    Sepia,
}

/// Second block: tone curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToneOp {
    /// `x * (1 + contrast) + brightness * 255`.
    BrightnessContrast { brightness: f64, contrast: f64 },
    /// Exponent in percent; 100 is the identity.
    Gamma { percent: f64 },
}

/// Third block: image quality.
#[derive(Debug, Clone, PartialEq)]
pub enum QualityOp {
    /// Box blur with an odd kernel.
    Blur { kernel: usize },
    /// Shrink by `factor`, then enlarge back.
    Downscale { factor: f64 },
    /// Per-cell stretch factors `1 + d` along each axis.
    GridDistort { x_steps: Vec<f64>, y_steps: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhotometricDraw {
    pub color: Option<ColorOp>,
    pub tone: Option<ToneOp>,
    pub quality: Option<QualityOp>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

pub fn draw_photometric<R: Rng + ?Sized>(cfg: &AugmentationConfig, rng: &mut R) -> PhotometricDraw {
    let color = rng.random_bool(cfg.block_prob).then(|| match rng.random_range(0..3) {
        0 => ColorOp::RgbShift([
            uniform(rng, cfg.rgb_shift_range),
            uniform(rng, cfg.rgb_shift_range),
            uniform(rng, cfg.rgb_shift_range),
        ]),
        1 => ColorOp::Grayscale,
        _ => ColorOp::Sepia,
    });
    let tone = rng.random_bool(cfg.block_prob).then(|| match rng.random_range(0..2) {
        0 => ToneOp::BrightnessContrast {
            brightness: uniform(rng, cfg.brightness_contrast_range),
            contrast: uniform(rng, cfg.brightness_contrast_range),
        },
        _ => ToneOp::Gamma {
            percent: uniform(rng, cfg.gamma_range),
        },
    });
    let quality = rng.random_bool(cfg.block_prob).then(|| match rng.random_range(0..3) {
        0 => {
            let [lo, hi] = cfg.blur_kernel_range;
            let odd: Vec<usize> = (lo..=hi).filter(|k| k % 2 == 1).collect();
            QualityOp::Blur {
                kernel: odd[rng.random_range(0..odd.len())],
            }
        }
        1 => QualityOp::Downscale {
            factor: cfg.downscale_factor,
        },
        _ => {
            let n = cfg.grid_cells;
            QualityOp::GridDistort {
                x_steps: (0..n).map(|_| uniform(rng, cfg.grid_distort_range)).collect(),
                y_steps: (0..n).map(|_| uniform(rng, cfg.grid_distort_range)).collect(),
            }
        }
    });
    PhotometricDraw { color, tone, quality }
}

pub fn apply_photometric<R: Rng + ?Sized>(image: &RgbImage, cfg: &AugmentationConfig, rng: &mut R) -> RgbImage {
    apply_photometric_draw(image, &draw_photometric(cfg, rng))
}

/// Runs the three blocks in order. Output values are rounded and clamped
/// to the 8-bit range.
pub fn apply_photometric_draw(image: &RgbImage, draw: &PhotometricDraw) -> RgbImage {
    let mut img = image.clone();
    if let Some(op) = draw.color {
        apply_color(&mut img, op);
    }
    if let Some(op) = draw.tone {
        apply_tone(&mut img, op);
    }
    match &draw.quality {
        Some(QualityOp::Blur { kernel }) => img = box_blur(&img, *kernel),
        Some(QualityOp::Downscale { factor }) => img = downscale(&img, *factor),
        Some(QualityOp::GridDistort { x_steps, y_steps }) => img = grid_distort(&img, x_steps, y_steps),
        None => {}
    }
    img
}

fn apply_color(img: &mut RgbImage, op: ColorOp) {
    for px in img.as_raw_mut().chunks_exact_mut(3) {
        let [r, g, b] = [px[0] as f64, px[1] as f64, px[2] as f64];
        let out = match op {
            ColorOp::RgbShift(s) => [r + s[0], g + s[1], b + s[2]],
            ColorOp::Grayscale => {
                let y = 0.299 * r + 0.587 * g + 0.114 * b;
                [y, y, y]
            }
            ColorOp::Sepia => SEPIA.map(|m| m[0] * r + m[1] * g + m[2] * b),
        };
        for c in 0..3 {
            px[c] = to_u8(out[c]);
        }
    }
}

fn apply_tone(img: &mut RgbImage, op: ToneOp) {
    let lut: [u8; 256] = std::array::from_fn(|v| {
        let x = v as f64;
        to_u8(match op {
            ToneOp::BrightnessContrast { brightness, contrast } => x * (1.0 + contrast) + brightness * 255.0,
            ToneOp::Gamma { percent } => 255.0 * (x / 255.0).powf(percent / 100.0),
        })
    });
    for v in img.as_raw_mut() {
        *v = lut[*v as usize];
    }
}

/// Mean filter with edge replication.
fn box_blur(img: &RgbImage, kernel: usize) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let r = (kernel / 2) as i64;
    let src = img.as_raw();
    let mut tmp = vec![0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for dx in -r..=r {
                let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                for c in 0..3 {
                    tmp[(y * w + x) * 3 + c] += src[(y * w + xx) * 3 + c] as f64;
                }
            }
        }
    }
    let norm = (kernel * kernel) as f64;
    let mut out = RgbImage::new(w, h);
    let dst = out.as_raw_mut();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for dy in -r..=r {
                    let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    acc += tmp[(yy * w + x) * 3 + c];
                }
                dst[(y * w + x) * 3 + c] = to_u8(acc / norm);
            }
        }
    }
    out
}

/// Area-averaged shrink followed by bilinear enlargement.
fn downscale(img: &RgbImage, factor: f64) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let sw = ((w as f64 * factor).round() as usize).max(1);
    let sh = ((h as f64 * factor).round() as usize).max(1);
    let mut small = RgbImage::new(sw, sh);
    for sy in 0..sh {
        let (y0, y1) = (sy * h / sh, ((sy + 1) * h / sh).max(sy * h / sh + 1));
        for sx in 0..sw {
            let (x0, x1) = (sx * w / sw, ((sx + 1) * w / sw).max(sx * w / sw + 1));
            let mut acc = [0.0; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = img.pixel(x, y);
                    for c in 0..3 {
                        acc[c] += p[c] as f64;
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            small.put_pixel(sx, sy, acc.map(|a| to_u8(a / n)));
        }
    }
    let (kx, ky) = (sw as f64 / w as f64, sh as f64 / h as f64);
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = small.sample_bilinear_clamped((x as f64 + 0.5) * kx - 0.5, (y as f64 + 0.5) * ky - 0.5);
            out.put_pixel(x, y, v.map(to_u8));
        }
    }
    out
}

/// Source coordinate for each output coordinate along one axis. The axis is
/// split into `steps.len()` cells whose source extent is stretched by
/// `1 + step`.
fn distort_axis(len: usize, steps: &[f64]) -> Vec<f64> {
    let n = steps.len().min(len).max(1);
    let cell = len / n;
    let mut map = Vec::with_capacity(len);
    let mut src = 0.0;
    for i in 0..n {
        let start = i * cell;
        let end = if i + 1 == n { len } else { start + cell };
        let seg = (end - start) as f64;
        let stretch = 1.0 + steps.get(i).copied().unwrap_or(0.0);
        for x in start..end {
            map.push(src + (x - start) as f64 * stretch);
        }
        src += seg * stretch;
    }
    map
}

fn grid_distort(img: &RgbImage, x_steps: &[f64], y_steps: &[f64]) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let mx = distort_axis(w, x_steps);
    let my = distort_axis(h, y_steps);
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.put_pixel(x, y, img.sample_bilinear_clamped(mx[x], my[y]).map(to_u8));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(n: usize) -> RgbImage {
        let mut img = RgbImage::new(n, n);
        for y in 0..n {
            for x in 0..n {
                img.put_pixel(
                    x,
                    y,
                    [(x * 9 % 256) as u8, (y * 5 % 256) as u8, ((x + y) * 3 % 256) as u8],
                );
            }
        }
        img
    }

    fn only(color: Option<ColorOp>, tone: Option<ToneOp>, quality: Option<QualityOp>) -> PhotometricDraw {
        PhotometricDraw { color, tone, quality }
    }

    #[test]
    fn rgb_shift_on_mid_gray() {
        let img = RgbImage::filled(8, 8, [128; 3]);
        let o = apply_photometric_draw(&img, &only(Some(ColorOp::RgbShift([20.0; 3])), None, None));
        assert!(o.as_raw().iter().all(|&v| v == 148));
    }

    #[test]
    fn shift_clamps() {
        let img = RgbImage::filled(2, 2, [250, 5, 100]);
        let o = apply_photometric_draw(&img, &only(Some(ColorOp::RgbShift([20.0, -20.0, 0.0])), None, None));
        assert_eq!(o.pixel(0, 0), [255, 0, 100]);
    }

    #[test]
    fn grayscale_equal_channels() {
        let o = apply_photometric_draw(&gradient(16), &only(Some(ColorOp::Grayscale), None, None));
        for px in o.as_raw().chunks_exact(3) {
            assert!(px[0] == px[1] && px[1] == px[2]);
        }
    }

    #[test]
    fn sepia_of_white_saturates_red_and_green() {
        let img = RgbImage::filled(1, 1, [255; 3]);
        let o = apply_photometric_draw(&img, &only(Some(ColorOp::Sepia), None, None));
        // 255 * row sums: 344.5, 306.8, 238.9
        assert_eq!(o.pixel(0, 0), [255, 255, 239]);
    }

    #[test]
    fn unit_gamma_identity() {
        let img = gradient(16);
        let o = apply_photometric_draw(&img, &only(None, Some(ToneOp::Gamma { percent: 100.0 }), None));
        assert_eq!(o, img);
    }

    #[test]
    fn brightness_contrast_arithmetic() {
        let img = RgbImage::filled(1, 1, [100; 3]);
        let op = ToneOp::BrightnessContrast {
            brightness: 0.1,
            contrast: 0.2,
        };
        let o = apply_photometric_draw(&img, &only(None, Some(op), None));
        assert_eq!(o.pixel(0, 0), [146; 3]); // 120 + 25.5
    }

    #[test]
    fn quality_ops_keep_constant_images() {
        let img = RgbImage::filled(20, 20, [77, 140, 9]);
        for q in [
            QualityOp::Blur { kernel: 7 },
            QualityOp::Downscale { factor: 0.25 },
            QualityOp::GridDistort {
                x_steps: vec![0.3, -0.3, 0.1, 0.0, -0.2],
                y_steps: vec![-0.1; 5],
            },
        ] {
            assert_eq!(apply_photometric_draw(&img, &only(None, None, Some(q))), img);
        }
    }

    #[test]
    fn zero_distortion_is_identity() {
        let img = gradient(23);
        let q = QualityOp::GridDistort {
            x_steps: vec![0.0; 5],
            y_steps: vec![0.0; 5],
        };
        assert_eq!(apply_photometric_draw(&img, &only(None, None, Some(q))), img);
    }

    #[test]
    fn blur_of_impulse_spreads_evenly() {
        let mut img = RgbImage::new(7, 7);
        img.put_pixel(3, 3, [90, 90, 90]);
        let o = apply_photometric_draw(&img, &only(None, None, Some(QualityOp::Blur { kernel: 3 })));
        assert_eq!(o.pixel(2, 2), [10; 3]);
        assert_eq!(o.pixel(3, 3), [10; 3]);
        assert_eq!(o.pixel(1, 1), [0; 3]);
    }
}
