#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = doglegs::dataset_io::parse_manifest(data) {
        let _ = m.validate();
    }
});
