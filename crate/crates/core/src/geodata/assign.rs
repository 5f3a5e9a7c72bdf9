use std::collections::HashSet;

use super::footprint::{FootprintLayer, LabeledFootprint, LabeledFootprintSet, PointLayer};
use super::DamageLabel;
use crate::error::{Error, Result};

/// Envelope around each footprint, in meters.
pub const DEFAULT_BUFFER_M: f64 = 7.5;

pub(crate) fn check_crs(a: Option<&str>, b: Option<&str>) -> Result<()> {
    match (a, b) {
        (Some(l), Some(r)) if l != r => Err(Error::CrsMismatch {
            left: l.to_string(),
            right: r.to_string(),
        }),
        _ => Ok(()),
    }
}

/// Transfers point labels onto footprints.
///
/// A point is a candidate for every footprint whose area lies within
/// `buffer_m` of it. Among several candidates it goes to the footprint with
/// the nearest barycentre (exact ties: lowest id). A footprint receiving
/// several points takes the most severe label. Footprints that receive no
/// point keep their prior label, if the layer carried one, else stay
/// unlabeled. Points outside every buffer are dropped and counted.
///
/// The output is sorted by footprint id and does not depend on the order of
/// either input.
pub fn assign_point_labels(
    footprints: &FootprintLayer,
    points: &PointLayer,
    buffer_m: f64,
) -> Result<LabeledFootprintSet> {
    if !(buffer_m > 0.0 && buffer_m.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "buffer must be positive, got {buffer_m}"
        )));
    }
    if footprints.footprints.is_empty() {
        return Err(Error::InvalidArgument("empty footprint list".into()));
    }
    check_crs(footprints.crs.as_deref(), points.crs.as_deref())?;

    let mut sorted: Vec<_> = footprints.footprints.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut seen = HashSet::new();
    for f in &sorted {
        if !seen.insert(&f.id) {
            return Err(Error::InvalidArgument(format!("duplicate footprint id {}", f.id)));
        }
    }

    let boxes: Vec<_> = sorted.iter().map(|f| f.polygon.bbox()).collect();
    let mut from_points: Vec<Option<DamageLabel>> = vec![None; sorted.len()];
    let mut unassigned = 0;

    for pt in &points.points {
        let p = pt.location;
        let mut best: Option<(f64, usize)> = None;
        for (i, f) in sorted.iter().enumerate() {
            let (lo, hi) = boxes[i];
            if p.x < lo.x - buffer_m || p.x > hi.x + buffer_m || p.y < lo.y - buffer_m || p.y > hi.y + buffer_m {
                continue;
            }
            if f.polygon.distance(p) > buffer_m {
                continue;
            }
            let d = p.distance(f.barycentre);
            // `sorted` is in id order, so strict `<` keeps the lowest id on ties.
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        match best {
            Some((_, i)) => {
                from_points[i] = Some(from_points[i].map_or(pt.label, |l| l.max(pt.label)));
            }
            None => unassigned += 1,
        }
    }

    let entries = sorted
        .into_iter()
        .zip(from_points)
        .map(|(f, label)| LabeledFootprint {
            footprint: f.clone(),
            label: label.or(f.prior_label),
        })
        .collect();
    Ok(LabeledFootprintSet {
        crs: footprints.crs.clone().or_else(|| points.crs.clone()),
        entries,
        unassigned_points: unassigned,
    })
}
