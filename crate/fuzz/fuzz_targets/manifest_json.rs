#![no_main]

use libfuzzer_sys::fuzz_target;
use tfadv::eval::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = Manifest::from_json(text) {
            Manifest::from_json(&m.to_json()).expect("serialized manifest parses");
        }
    }
});
