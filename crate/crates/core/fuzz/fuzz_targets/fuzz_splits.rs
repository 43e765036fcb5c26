#![no_main]

use std::path::Path;

use crossmetric::data::manifest::parse_splits;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_splits(text, Path::new("fuzz_splits.csv"), 16);
        let _ = parse_splits(text, Path::new("fuzz_splits.csv"), 0);
    }
});
