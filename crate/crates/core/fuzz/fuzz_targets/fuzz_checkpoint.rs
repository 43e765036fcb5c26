#![no_main]

use std::path::Path;

use crossmetric::checkpoint::parse_checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_checkpoint(text, Path::new("fuzz.ckpt"));
    }
});
