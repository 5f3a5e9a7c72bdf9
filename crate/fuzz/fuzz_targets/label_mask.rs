#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use siamdamage::geodata::decode_label_mask;

fuzz_target!(|data: &[u8]| {
    if let Ok((mask, grid)) = decode_label_mask(data, Path::new("fuzz.tif")) {
        assert_eq!((mask.width(), mask.height()), (grid.width, grid.height));
    }
});
