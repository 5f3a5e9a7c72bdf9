#![no_main]

use candle_core::{DType, Device};
use libfuzzer_sys::fuzz_target;
use siamdamage::model::{parse_checkpoint, parse_tensors};

fuzz_target!(|data: &[u8]| {
    let _ = parse_tensors(data);
    if let Ok(ck) = parse_checkpoint(data) {
        let _ = ck.to_model(DType::F32, &Device::Cpu);
    }
});
