#![no_main]

use libfuzzer_sys::fuzz_target;
use siamdamage::pipeline::ProjectConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ProjectConfig::parse(text) {
        if cfg.validate().is_ok() {
            let again = ProjectConfig::parse(&cfg.to_toml()).unwrap();
            assert_eq!(again, cfg);
        }
    }
});
