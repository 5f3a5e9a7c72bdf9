use std::io::Cursor;
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::Tag;
use tiff::ColorType;

use super::LabelMask;
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Affine pixel-to-world map in GDAL order:
/// `x = c[0] + col * c[1] + row * c[2]`, `y = c[3] + col * c[4] + row * c[5]`,
/// where (col, row) addresses pixel corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform(pub [f64; 6]);

impl GeoTransform {
    /// North-up transform with square pixels of `res` meters.
    pub fn north_up(origin_x: f64, origin_y: f64, res: f64) -> Self {
        GeoTransform([origin_x, res, 0.0, origin_y, 0.0, -res])
    }

    pub fn determinant(&self) -> f64 {
        let c = &self.0;
        c[1] * c[5] - c[2] * c[4]
    }

    pub fn is_invertible(&self) -> bool {
        let d = self.determinant();
        d != 0.0 && d.is_finite()
    }

    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        let c = &self.0;
        (c[0] + col * c[1] + row * c[2], c[3] + col * c[4] + row * c[5])
    }

    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let c = &self.0;
        let det = self.determinant();
        let (dx, dy) = (x - c[0], y - c[3]);
        ((c[5] * dx - c[2] * dy) / det, (-c[4] * dx + c[1] * dy) / det)
    }

    fn is_axis_aligned(&self) -> bool {
        self.0[2] == 0.0 && self.0[4] == 0.0
    }
}

/// Pixel grid of a georeferenced raster.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub width: usize,
    pub height: usize,
    pub transform: GeoTransform,
    pub crs: Option<String>,
}

impl RasterGrid {
    /// Grid of the `w`x`h` window whose top-left pixel is `(x0, y0)`.
    pub fn window(&self, x0: usize, y0: usize, w: usize, h: usize) -> RasterGrid {
        let (ox, oy) = self.transform.pixel_to_world(x0 as f64, y0 as f64);
        let mut t = self.transform;
        t.0[0] = ox;
        t.0[3] = oy;
        RasterGrid {
            width: w,
            height: h,
            transform: t,
            crs: self.crs.clone(),
        }
    }
}

/// Georeferenced 8-bit raster with interleaved bands (at least RGB).
#[derive(Debug, Clone, PartialEq)]
pub struct GeoRaster {
    grid: RasterGrid,
    bands: usize,
    data: Vec<u8>,
}

impl GeoRaster {
    pub fn new(grid: RasterGrid, bands: usize, data: Vec<u8>) -> Result<Self> {
        if grid.width == 0 || grid.height == 0 {
            return Err(Error::InvalidArgument("raster has zero extent".into()));
        }
        if bands < 3 {
            return Err(Error::InsufficientBands {
                path: "<memory>".into(),
                bands,
            });
        }
        if !grid.transform.is_invertible() {
            return Err(Error::InvalidArgument("transform is not invertible".into()));
        }
        if data.len() != grid.width * grid.height * bands {
            return Err(Error::ShapeMismatch(format!(
                "raster buffer has {} bytes, expected {}",
                data.len(),
                grid.width * grid.height * bands
            )));
        }
        Ok(Self { grid, bands, data })
    }

    pub fn from_rgb(grid: RasterGrid, image: RgbImage) -> Result<Self> {
        if image.width() != grid.width || image.height() != grid.height {
            return Err(Error::ShapeMismatch("image and grid differ in size".into()));
        }
        Self::new(grid, 3, image.into_raw())
    }

    pub fn grid(&self) -> &RasterGrid {
        &self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.grid.transform
    }

    pub fn crs(&self) -> Option<&str> {
        self.grid.crs.as_deref()
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.grid.width + x) * self.bands;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// RGB copy of the `w`x`h` window at (`x0`, `y0`).
    pub fn crop_rgb(&self, x0: usize, y0: usize, w: usize, h: usize) -> RgbImage {
        assert!(x0 + w <= self.grid.width && y0 + h <= self.grid.height);
        let mut out = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let row = (y * self.grid.width + x0) * self.bands;
            if self.bands == 3 {
                out.extend_from_slice(&self.data[row..row + w * 3]);
            } else {
                for x in 0..w {
                    let i = row + x * self.bands;
                    out.extend_from_slice(&self.data[i..i + 3]);
                }
            }
        }
        RgbImage::from_raw(w, h, out).expect("crop size")
    }

    pub fn to_rgb(&self) -> RgbImage {
        self.crop_rgb(0, 0, self.grid.width, self.grid.height)
    }
}

const GEOKEY_MODEL_TYPE: u16 = 1024;
const GEOKEY_RASTER_TYPE: u16 = 1025;
const GEOKEY_GEOGRAPHIC: u16 = 2048;
const GEOKEY_PROJECTED: u16 = 3072;
const USER_DEFINED: u16 = 32767;

struct DecodedTiff {
    width: usize,
    height: usize,
    samples: usize,
    data: Vec<u8>,
    transform: Option<GeoTransform>,
    crs: Option<String>,
}

fn decode_tiff(bytes: &[u8]) -> Result<DecodedTiff> {
    let mut limits = Limits::default();
    limits.decoding_buffer_size = 1 << 30;
    let mut dec = Decoder::new(Cursor::new(bytes))?.with_limits(limits);
    let (w, h) = dec.dimensions()?;
    let color = dec.colortype()?;
    if color.bit_depth() != 8 {
        return Err(Error::UnsupportedRaster(format!(
            "{}-bit samples (need 8-bit)",
            color.bit_depth()
        )));
    }
    let samples = match color {
        ColorType::Gray(_) => 1,
        ColorType::GrayA(_) => 2,
        ColorType::RGB(_) => 3,
        ColorType::RGBA(_) => 4,
        ColorType::Multiband { num_samples, .. } => num_samples as usize,
        other => {
            return Err(Error::UnsupportedRaster(format!("color type {other:?}")));
        }
    };
    if let Some(2) = dec.find_tag_unsigned::<u16>(Tag::PlanarConfiguration)? {
        return Err(Error::UnsupportedRaster("planar band layout".into()));
    }
    let transform = read_transform(&mut dec)?;
    let crs = read_crs(&mut dec)?;
    let data = match dec.read_image()? {
        DecodingResult::U8(v) => v,
        _ => return Err(Error::UnsupportedRaster("non-u8 sample data".into())),
    };
    let (width, height) = (w as usize, h as usize);
    if data.len() != width * height * samples {
        return Err(Error::UnsupportedRaster("decoded size mismatch".into()));
    }
    Ok(DecodedTiff {
        width,
        height,
        samples,
        data,
        transform,
        crs,
    })
}

fn read_transform<R: std::io::Read + std::io::Seek>(dec: &mut Decoder<R>) -> Result<Option<GeoTransform>> {
    if let Some(v) = dec.find_tag(Tag::ModelTransformationTag)? {
        let m = v.into_f64_vec()?;
        if m.len() >= 16 {
            return Ok(Some(GeoTransform([m[3], m[0], m[1], m[7], m[4], m[5]])));
        }
        return Ok(None);
    }
    let scale = dec.find_tag(Tag::ModelPixelScaleTag)?;
    let tie = dec.find_tag(Tag::ModelTiepointTag)?;
    match (scale, tie) {
        (Some(s), Some(t)) => {
            let s = s.into_f64_vec()?;
            let t = t.into_f64_vec()?;
            if s.len() < 2 || t.len() < 6 {
                return Ok(None);
            }
            let (sx, sy) = (s[0], s[1]);
            let origin_x = t[3] - t[0] * sx;
            let origin_y = t[4] + t[1] * sy;
            Ok(Some(GeoTransform([origin_x, sx, 0.0, origin_y, 0.0, -sy])))
        }
        _ => Ok(None),
    }
}

fn read_crs<R: std::io::Read + std::io::Seek>(dec: &mut Decoder<R>) -> Result<Option<String>> {
    let Some(v) = dec.find_tag(Tag::GeoKeyDirectoryTag)? else {
        return Ok(None);
    };
    let keys: Vec<u16> = v
        .into_u64_vec()?
        .into_iter()
        .map(|k| k.min(u16::MAX as u64) as u16)
        .collect();
    if keys.len() < 4 {
        return Ok(None);
    }
    let n = keys[3] as usize;
    let mut found = None;
    for entry in keys[4..].chunks_exact(4).take(n) {
        let (id, loc, value) = (entry[0], entry[1], entry[3]);
        if loc != 0 || value == 0 || value == USER_DEFINED {
            continue;
        }
        if id == GEOKEY_PROJECTED || (id == GEOKEY_GEOGRAPHIC && found.is_none()) {
            found = Some(format!("EPSG:{value}"));
        }
    }
    Ok(found)
}

/// Decodes an in-memory georeferenced TIFF. `origin` labels errors.
pub fn decode_geotiff(bytes: &[u8], origin: &Path) -> Result<GeoRaster> {
    let t = decode_tiff(bytes)?;
    if t.samples < 3 {
        return Err(Error::InsufficientBands {
            path: origin.to_path_buf(),
            bands: t.samples,
        });
    }
    let transform = t
        .transform
        .filter(GeoTransform::is_invertible)
        .ok_or_else(|| Error::NotGeoreferenced(origin.to_path_buf()))?;
    let grid = RasterGrid {
        width: t.width,
        height: t.height,
        transform,
        crs: t.crs,
    };
    GeoRaster::new(grid, t.samples, t.data)
}

/// Loads a georeferenced 8-bit TIFF with at least three bands.
pub fn load_raster(path: &Path) -> Result<GeoRaster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_geotiff(&bytes, path)
}

/// Loads a single-band label mask and its grid.
pub fn load_label_mask(path: &Path) -> Result<(LabelMask, RasterGrid)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_label_mask(&bytes, path)
}

/// Decodes an in-memory single-band label mask. `origin` labels errors.
pub fn decode_label_mask(bytes: &[u8], origin: &Path) -> Result<(LabelMask, RasterGrid)> {
    let t = decode_tiff(bytes)?;
    if t.samples != 1 {
        return Err(Error::UnsupportedRaster(format!(
            "label mask must be single-band, found {} bands",
            t.samples
        )));
    }
    let transform = t
        .transform
        .filter(GeoTransform::is_invertible)
        .ok_or_else(|| Error::NotGeoreferenced(origin.to_path_buf()))?;
    let mask = LabelMask::from_raw(t.width, t.height, t.data)?;
    Ok((
        mask,
        RasterGrid {
            width: t.width,
            height: t.height,
            transform,
            crs: t.crs,
        },
    ))
}

fn geo_keys(crs: Option<&str>) -> Option<Vec<u16>> {
    let code: u16 = crs?.strip_prefix("EPSG:")?.parse().ok()?;
    let geographic = (4000..5000).contains(&code);
    let (model, key) = if geographic {
        (2, GEOKEY_GEOGRAPHIC)
    } else {
        (1, GEOKEY_PROJECTED)
    };
    Some(vec![
        1,
        1,
        0,
        3,
        GEOKEY_MODEL_TYPE,
        0,
        1,
        model,
        GEOKEY_RASTER_TYPE,
        0,
        1,
        1,
        key,
        0,
        1,
        code,
    ])
}

fn write_geo_tags<W: std::io::Write + std::io::Seek, K: tiff::encoder::TiffKind>(
    enc: &mut tiff::encoder::DirectoryEncoder<'_, W, K>,
    grid: &RasterGrid,
) -> Result<()> {
    let c = grid.transform.0;
    if grid.transform.is_axis_aligned() && c[5] < 0.0 {
        enc.write_tag(Tag::ModelPixelScaleTag, &[c[1], -c[5], 0.0][..])?;
        enc.write_tag(Tag::ModelTiepointTag, &[0.0, 0.0, 0.0, c[0], c[3], 0.0][..])?;
    } else {
        let m = [
            c[1], c[2], 0.0, c[0], c[4], c[5], 0.0, c[3], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        ];
        enc.write_tag(Tag::ModelTransformationTag, &m[..])?;
    }
    if let Some(keys) = geo_keys(grid.crs.as_deref()) {
        enc.write_tag(Tag::GeoKeyDirectoryTag, &keys[..])?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: Vec<u8>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encodes the RGB bands as an uncompressed GeoTIFF.
pub fn encode_raster(raster: &GeoRaster) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    {
        let mut enc = TiffEncoder::new(&mut buf)?;
        let mut img = enc.new_image::<colortype::RGB8>(raster.width() as u32, raster.height() as u32)?;
        write_geo_tags(img.encoder(), raster.grid())?;
        let rgb = raster.to_rgb();
        img.write_data(rgb.as_raw())?;
    }
    Ok(buf.into_inner())
}

pub fn write_raster(path: &Path, raster: &GeoRaster) -> Result<()> {
    write_file(path, encode_raster(raster)?)
}

pub fn write_label_mask(path: &Path, mask: &LabelMask, grid: &RasterGrid) -> Result<()> {
    if mask.width() != grid.width || mask.height() != grid.height {
        return Err(Error::ShapeMismatch("mask and grid differ in size".into()));
    }
    let mut buf = Cursor::new(Vec::new());
    {
        let mut enc = TiffEncoder::new(&mut buf)?;
        let mut img = enc.new_image::<colortype::Gray8>(grid.width as u32, grid.height as u32)?;
        write_geo_tags(img.encoder(), grid)?;
        img.write_data(mask.as_slice())?;
    }
    write_file(path, buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize) -> RasterGrid {
        RasterGrid {
            width: w,
            height: h,
            transform: GeoTransform::north_up(500_000.0, 5_200_000.0, 0.5),
            crs: Some("EPSG:32637".into()),
        }
    }

    #[test]
    fn transform_roundtrip() {
        let t = GeoTransform([10.0, 0.5, 0.1, 20.0, -0.2, -0.5]);
        let (x, y) = t.pixel_to_world(3.5, 7.25);
        let (c, r) = t.world_to_pixel(x, y);
        assert!((c - 3.5).abs() < 1e-9 && (r - 7.25).abs() < 1e-9);
        assert!(!GeoTransform([0.0, 1.0, 2.0, 0.0, 0.5, 1.0]).is_invertible());
    }

    #[test]
    fn raster_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.tif");
        let data: Vec<u8> = (0..100 * 80 * 3).map(|i| (i % 251) as u8).collect();
        let r = GeoRaster::new(grid(100, 80), 3, data).unwrap();
        write_raster(&path, &r).unwrap();
        let back = load_raster(&path).unwrap();
        assert_eq!((back.width(), back.height(), back.bands()), (100, 80, 3));
        assert_eq!(back, r);
    }

    #[test]
    fn rotated_transform_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rot.tif");
        let mut g = grid(4, 4);
        g.transform = GeoTransform([1.0, 0.5, 0.25, 2.0, 0.1, -0.5]);
        g.crs = Some("EPSG:4326".into());
        let r = GeoRaster::new(g.clone(), 3, vec![7; 48]).unwrap();
        write_raster(&path, &r).unwrap();
        assert_eq!(load_raster(&path).unwrap().grid(), &g);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_raster(Path::new("/nonexistent/x.tif")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn single_band_is_insufficient() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.tif");
        let g = grid(6, 5);
        write_label_mask(&path, &LabelMask::unlabeled(6, 5), &g).unwrap();
        assert!(matches!(
            load_raster(&path),
            Err(Error::InsufficientBands { bands: 1, .. })
        ));
        let (m, back) = load_label_mask(&path).unwrap();
        assert_eq!(m.labeled_count(), 0);
        assert_eq!(back, g);
    }

    #[test]
    fn plain_tiff_is_not_georeferenced() {
        let mut buf = Cursor::new(Vec::new());
        TiffEncoder::new(&mut buf)
            .unwrap()
            .write_image::<colortype::RGB8>(2, 2, &[1u8; 12])
            .unwrap();
        let err = decode_geotiff(buf.get_ref(), Path::new("plain.tif")).unwrap_err();
        assert!(matches!(err, Error::NotGeoreferenced(_)));
    }
}
