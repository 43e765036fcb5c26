#![no_main]

use std::path::Path;

use crossmetric::data::features::parse_features;
use crossmetric::data::Modality;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let path = Path::new("fuzz.features");
        let _ = parse_features(text, path, Modality::Image, None);
        let _ = parse_features(text, path, Modality::Text, Some(8));
    }
});
