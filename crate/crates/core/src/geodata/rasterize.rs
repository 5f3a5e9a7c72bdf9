use super::assign::check_crs;
use super::footprint::LabeledFootprintSet;
use super::geometry::{Point, Polygon};
use super::raster::RasterGrid;
use super::LabelMask;
use crate::error::Result;

/// Calls `paint(col, row)` for every pixel whose center lies inside `poly`
/// (given in world coordinates).
fn for_each_covered_pixel(poly: &Polygon, grid: &RasterGrid, mut paint: impl FnMut(usize, usize)) {
    let t = grid.transform;
    let px = poly.map_points(|p| {
        let (c, r) = t.world_to_pixel(p.x, p.y);
        Point::new(c, r)
    });
    let (lo, hi) = px.bbox();
    let c0 = (lo.x.floor().max(0.0)) as usize;
    let r0 = (lo.y.floor().max(0.0)) as usize;
    let c1 = (hi.x.ceil().max(0.0) as usize).min(grid.width);
    let r1 = (hi.y.ceil().max(0.0) as usize).min(grid.height);
    for r in r0..r1 {
        for c in c0..c1 {
            if px.contains(Point::new(c as f64 + 0.5, r as f64 + 0.5)) {
                paint(c, r);
            }
        }
    }
}

/// Burns labeled footprints into a mask on `grid` using pixel-center
/// membership. Polygons are painted in ascending severity, so overlaps take
/// the worst label. Unlabeled footprints and background stay unlabeled.
pub fn rasterize_labels(labeled: &LabeledFootprintSet, grid: &RasterGrid) -> Result<LabelMask> {
    check_crs(labeled.crs.as_deref(), grid.crs.as_deref())?;
    let mut order: Vec<_> = labeled
        .entries
        .iter()
        .filter_map(|e| e.label.map(|l| (l, &e.footprint)))
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let mut mask = LabelMask::unlabeled(grid.width, grid.height);
    for (label, fp) in order {
        for_each_covered_pixel(&fp.polygon, grid, |c, r| mask.set(c, r, label.code()));
    }
    Ok(mask)
}

/// Row-major flags for pixels covered by any footprint, labeled or not.
pub fn footprint_presence(labeled: &LabeledFootprintSet, grid: &RasterGrid) -> Result<Vec<bool>> {
    check_crs(labeled.crs.as_deref(), grid.crs.as_deref())?;
    let mut out = vec![false; grid.width * grid.height];
    for e in &labeled.entries {
        for_each_covered_pixel(&e.footprint.polygon, grid, |c, r| out[r * grid.width + c] = true);
    }
    Ok(out)
}
