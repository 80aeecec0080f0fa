#![no_main]

use libfuzzer_sys::fuzz_target;
use tfadv::eval::TransferMatrix;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = TransferMatrix::from_csv(text) {
            assert_eq!(TransferMatrix::from_csv(&m.to_csv()).expect("round trip"), m);
            let _ = m.report();
        }
    }
});
