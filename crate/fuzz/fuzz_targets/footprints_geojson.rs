#![no_main]

use libfuzzer_sys::fuzz_target;
use siamdamage::geodata::{assign_point_labels, parse_footprints_geojson, PointLayer};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(layer) = parse_footprints_geojson(text) {
        for f in &layer.footprints {
            assert!(f.barycentre.x.is_finite() && f.barycentre.y.is_finite());
        }
        let points = PointLayer {
            crs: layer.crs.clone(),
            points: Vec::new(),
        };
        let _ = assign_point_labels(&layer, &points, 7.5);
    }
});
