#![no_main]

use libfuzzer_sys::fuzz_target;
use siamdamage::model::parse_name_table;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(table) = parse_name_table(text) {
        let _ = table.translate("encoder.stage0.block0.conv1.conv.weight");
    }
});
