#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use siamdamage::geodata::{decode_geotiff, encode_raster};

fuzz_target!(|data: &[u8]| {
    if let Ok(raster) = decode_geotiff(data, Path::new("fuzz.tif")) {
        assert_eq!(raster.as_raw().len(), raster.width() * raster.height() * raster.bands());
        // Whatever decodes must survive a round trip.
        let bytes = encode_raster(&raster).unwrap();
        let again = decode_geotiff(&bytes, Path::new("fuzz.tif")).unwrap();
        assert_eq!(again.as_raw(), raster.as_raw());
    }
});
