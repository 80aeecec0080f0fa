#![no_main]

use libfuzzer_sys::fuzz_target;
use tfadv::waveforms::Interval;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(iv) = text.parse::<Interval>() {
            assert!(iv.is_valid());
        }
    }
});
