#![no_main]

use std::path::Path;

use crossmetric::data::manifest::DatasetManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = DatasetManifest::from_toml_str(text, Path::new("fuzz_dataset.toml"));
    }
});
