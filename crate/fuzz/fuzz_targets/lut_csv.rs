#![no_main]

use libfuzzer_sys::fuzz_target;
use tfadv::render::ColorLut;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(lut) = ColorLut::from_csv(text) {
            assert!(lut.entries().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            let _ = lut.map(0.5);
        }
    }
});
