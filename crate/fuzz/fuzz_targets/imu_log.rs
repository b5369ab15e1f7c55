#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = doglegs::dataset_io::parse_imu_log(data, "fuzz") {
        assert!(p.rows.windows(2).all(|w| w[1].t > w[0].t));
    }
});
