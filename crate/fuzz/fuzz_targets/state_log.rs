#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = doglegs::dataset_io::parse_state_log(data, "fuzz");
});
