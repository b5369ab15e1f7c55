#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    let _ = doglegs::dataset_io::parse_contact_log(rest, "fuzz", usize::from(n % 6) + 1);
});
