#![no_main]

use libfuzzer_sys::fuzz_target;
use siamdamage::sampling::{parse_manifest, write_manifest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = parse_manifest(text) {
        let again = parse_manifest(&write_manifest(&m)).unwrap();
        assert_eq!(again, m);
    }
});
