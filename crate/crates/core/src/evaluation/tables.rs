use std::fmt::Write as _;
use std::path::Path;

use super::MetricsReport;
use crate::error::{Error, Result};
use crate::geodata::{write_raster, ClassScheme, GeoRaster, LabelMask, RasterGrid, UNLABELED};
use crate::image::RgbImage;

/// One labelled line of a report table.
#[derive(Debug, Clone)]
pub struct ReportRow<'a> {
    pub label: String,
    pub report: &'a MetricsReport,
}

fn pct(v: f64) -> String {
    format!("{:.0}", v * 100.0)
}

fn render(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::from("|");
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(s, " {c:>w$} |");
        }
        s.push('\n');
        s
    };
    let mut out = line(header);
    out.push('|');
    for w in &widths {
        out.push_str(&"-".repeat(w + 2));
        out.push('|');
    }
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

/// Single-scheme table: label, BAS, macro F1, then per-class F1, in percent.
pub fn format_table(first_column: &str, rows: &[ReportRow]) -> Result<String> {
    let Some(first) = rows.first() else {
        return Ok(String::new());
    };
    let scheme = first.report.scheme;
    if rows.iter().any(|r| r.report.scheme != scheme) {
        return Err(Error::InvalidArgument("table rows mix class schemes".into()));
    }
    let n = scheme.num_classes();
    let mut header = vec![first_column.to_string(), format!("BAS_{n}"), format!("F1_{n}")];
    header.extend(scheme.class_names().iter().map(|s| s.to_string()));
    let body = rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.label.clone(), pct(r.report.balanced_accuracy), pct(r.report.macro_f1)];
            cells.extend(r.report.per_class_f1.iter().map(|&f| pct(f)));
            cells
        })
        .collect::<Vec<_>>();
    Ok(render(&header, &body))
}

/// Side-by-side three-class and two-class columns for each row.
pub fn dual_table(first_column: &str, rows: &[(String, &MetricsReport, &MetricsReport)]) -> Result<String> {
    let mut header = vec![first_column.to_string()];
    let mut body = Vec::with_capacity(rows.len());
    for (i, (label, three, two)) in rows.iter().enumerate() {
        if three.scheme != ClassScheme::ThreeClass || two.scheme != ClassScheme::TwoClass {
            return Err(Error::InvalidArgument(format!(
                "row {label:?} needs a three-class and a two-class report"
            )));
        }
        if i == 0 {
            for r in [three, two] {
                let n = r.scheme.num_classes();
                header.push(format!("BAS_{n}"));
                header.push(format!("F1_{n}"));
                header.extend(r.scheme.class_names().iter().map(|s| s.to_string()));
            }
        }
        let mut cells = vec![label.clone()];
        for r in [three, two] {
            cells.push(pct(r.balanced_accuracy));
            cells.push(pct(r.macro_f1));
            cells.extend(r.per_class_f1.iter().map(|&f| pct(f)));
        }
        body.push(cells);
    }
    Ok(render(&header, &body))
}

/// Dual-layout table whose rows are the settings of one experimental axis
/// (pretraining, augmentation, dilation).
pub fn comparison_table(axis: &str, rows: &[(String, &MetricsReport, &MetricsReport)]) -> Result<String> {
    dual_table(axis, rows)
}

/// Colour-coded class map: green no damage, orange moderate, red severe or
/// destroyed (under the four-class scheme severe is dark red), black where
/// `restrict` is unlabeled.
pub fn damage_map(pred: &LabelMask, scheme: ClassScheme, restrict: Option<&LabelMask>) -> RgbImage {
    let palette: &[[u8; 3]] = match scheme {
        ClassScheme::FourClass => &[[40, 170, 60], [250, 160, 30], [200, 30, 30], [110, 0, 0]],
        ClassScheme::ThreeClass => &[[40, 170, 60], [250, 160, 30], [200, 30, 30]],
        ClassScheme::TwoClass => &[[40, 170, 60], [200, 30, 30]],
    };
    let mut img = RgbImage::new(pred.width(), pred.height());
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            let keep = restrict.is_none_or(|m| m.get(x, y) != UNLABELED);
            let c = pred.get(x, y);
            if keep && c != UNLABELED && (c as usize) < palette.len() {
                img.put_pixel(x, y, palette[c as usize]);
            }
        }
    }
    img
}

/// Writes [`damage_map`] as a georeferenced RGB GeoTIFF on `grid`.
pub fn write_damage_map(
    path: &Path,
    pred: &LabelMask,
    scheme: ClassScheme,
    restrict: Option<&LabelMask>,
    grid: &RasterGrid,
) -> Result<()> {
    let raster = GeoRaster::from_rgb(grid.clone(), damage_map(pred, scheme, restrict))?;
    write_raster(path, &raster)
}

#[cfg(test)]
mod tests {
    use super::super::{report, ConfusionMatrix, FoldTag};
    use super::*;

    #[test]
    fn dual_layout_headers() {
        let r3 = report(
            &ConfusionMatrix::from_counts(3, vec![1, 0, 0, 0, 1, 0, 0, 0, 1]).unwrap(),
            ClassScheme::ThreeClass,
            FoldTag::Mean,
        )
        .unwrap();
        let r2 = report(
            &ConfusionMatrix::from_counts(2, vec![3, 1, 0, 2]).unwrap(),
            ClassScheme::TwoClass,
            FoldTag::Mean,
        )
        .unwrap();
        let t = dual_table("Model", &[("ResNet".into(), &r3, &r2)]).unwrap();
        let header = t.lines().next().unwrap();
        let cols: Vec<&str> = header.split('|').map(str::trim).filter(|s| !s.is_empty()).collect();
        assert_eq!(
            cols,
            [
                "Model",
                "BAS_3",
                "F1_3",
                "No Damage",
                "Moderate Damage",
                "Severe + Destroyed",
                "BAS_2",
                "F1_2",
                "No Damage",
                "Damage"
            ]
        );
        assert!(t.lines().nth(2).unwrap().contains("100"));
        assert!(dual_table("Model", &[("x".into(), &r2, &r3)]).is_err());
    }

    #[test]
    fn palette_and_restriction() {
        let pred = LabelMask::from_raw(2, 1, vec![0, 1]).unwrap();
        let restrict = LabelMask::from_raw(2, 1, vec![0, UNLABELED]).unwrap();
        let img = damage_map(&pred, ClassScheme::TwoClass, Some(&restrict));
        assert_eq!(img.pixel(0, 0), [40, 170, 60]);
        assert_eq!(img.pixel(1, 0), [0, 0, 0]);
    }
}
