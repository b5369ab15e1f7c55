#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = doglegs::dataset_io::parse_config(text, "fuzz") {
            let again = doglegs::dataset_io::parse_config(&cfg.to_toml().unwrap(), "fuzz").unwrap();
            assert_eq!(cfg, again);
        }
    }
});
