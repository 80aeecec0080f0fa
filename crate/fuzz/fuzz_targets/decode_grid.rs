#![no_main]

use libfuzzer_sys::fuzz_target;
use tfadv::tfa::{decode_grid, encode_grid};

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = decode_grid(data) {
        let again = decode_grid(&encode_grid(&grid)).expect("re-encoded grid decodes");
        assert_eq!(again.data().len(), grid.data().len());
    }
});
