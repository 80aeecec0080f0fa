#![no_main]

use libfuzzer_sys::fuzz_target;
use tfadv::waveforms::{decode_record, encode_record};

fuzz_target!(|data: &[u8]| {
    if let Ok((label, samples)) = decode_record(data) {
        // Stored samples are f32, so a decoded record re-encodes exactly.
        assert_eq!(encode_record(label, &samples), data);
    }
});
