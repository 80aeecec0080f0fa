#![no_main]

use libfuzzer_sys::fuzz_target;
use tfadv::nn::{decode_model, encode_model};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_model(data) {
        assert_eq!(encode_model(&model), data);
    }
});
