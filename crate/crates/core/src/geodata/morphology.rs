use super::{LabelMask, UNLABELED};
use crate::error::{Error, Result};

/// Severity-maximum dilation with a square `kernel`x`kernel` window.
/// Unlabeled acts as minus infinity, so labeled regions grow by
/// `kernel / 2` pixels and overlapping growth keeps the worst label.
pub fn dilate_mask(mask: &LabelMask, kernel: usize) -> Result<LabelMask> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "dilation kernel must be odd and positive, got {kernel}"
        )));
    }
    if kernel == 1 {
        return Ok(mask.clone());
    }
    let (w, h) = (mask.width(), mask.height());
    let r = kernel / 2;
    // Shift codes so that unlabeled sorts lowest: 0 = unlabeled, code + 1 otherwise.
    let rank: Vec<u8> = mask
        .as_slice()
        .iter()
        .map(|&v| if v == UNLABELED { 0 } else { v + 1 })
        .collect();

    // A square window maximum separates into a row pass and a column pass.
    let mut rows = vec![0u8; w * h];
    for y in 0..h {
        let line = &rank[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = line[lo..=hi].iter().copied().max().unwrap_or(0);
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).max().unwrap_or(0);
        }
    }
    let data = out
        .into_iter()
        .map(|v| if v == 0 { UNLABELED } else { v - 1 })
        .collect();
    LabelMask::from_raw(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_grows_to_block() {
        let mut m = LabelMask::unlabeled(5, 5);
        m.set(2, 2, 2);
        let d = dilate_mask(&m, 3).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let inside = (1..=3).contains(&x) && (1..=3).contains(&y);
                assert_eq!(d.get(x, y), if inside { 2 } else { UNLABELED });
            }
        }
    }

    #[test]
    fn kernel_one_is_identity_and_even_rejected() {
        let m = LabelMask::from_raw(3, 1, vec![0, 255, 3]).unwrap();
        assert_eq!(dilate_mask(&m, 1).unwrap(), m);
        assert!(dilate_mask(&m, 2).is_err());
        assert!(dilate_mask(&m, 0).is_err());
    }

    #[test]
    fn worst_label_wins_between_neighbours() {
        let m = LabelMask::from_raw(3, 1, vec![0, 255, 3]).unwrap();
        assert_eq!(dilate_mask(&m, 3).unwrap().as_slice(), &[0, 3, 3]);
    }
}
