#![no_main]

use libfuzzer_sys::fuzz_target;
use siamdamage::geodata::parse_points_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(layer) = parse_points_csv(text) {
        for p in &layer.points {
            assert!(p.location.x.is_finite() && p.location.y.is_finite());
        }
    }
});
