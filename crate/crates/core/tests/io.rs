use std::path::Path;

use nalgebra::UnitQuaternion;
use proptest::prelude::*;

use doglegs::dataset_io::logs::{
    write_contact_log_to, write_encoder_log_to, write_imu_log_to, write_truth_to, ContactSample, EncoderSample,
};
use doglegs::dataset_io::output::write_state_log_to;
use doglegs::dataset_io::{
    load_dataset, parse_config, parse_contact_log, parse_encoder_log, parse_imu_log, parse_state_log, parse_truth,
    write_dataset, Dataset, LegRecord, RunConfig, StateRecord,
};
use doglegs::dataset_io::parse_manifest;
use doglegs::kinematics::JointAngles;
use doglegs::math_nav::Vec3;
use doglegs::metrics::PoseTrack;
use doglegs::simulator::simulate;
use doglegs::strapdown::ImuSample;

fn times(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-4..0.1f64, n).prop_map(|d| {
        d.iter()
            .scan(0.0, |t, x| {
                *t += x;
                Some(*t)
            })
            .collect()
    })
}

fn vec3(s: f64) -> impl Strategy<Value = Vec3> {
    (-s..s, -s..s, -s..s).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn nonneg3() -> impl Strategy<Value = Vec3> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #[test]
    fn imu_log_round_trips_bit_exact(
        (t, g, a) in (1usize..40).prop_flat_map(|n| (
            times(n),
            prop::collection::vec(vec3(30.0), n),
            prop::collection::vec(vec3(150.0), n),
        ))
    ) {
        let samples: Vec<ImuSample> = (0..t.len()).map(|k| ImuSample::new(t[k], g[k], a[k])).collect();
        let mut buf = Vec::new();
        write_imu_log_to(&mut buf, &samples).unwrap();
        let back = parse_imu_log(&buf[..], "mem").unwrap();
        prop_assert_eq!(back.skipped, 0);
        prop_assert_eq!(back.rows, samples);
    }

    #[test]
    fn truth_round_trips_bit_exact(
        (t, p, e) in (1usize..40).prop_flat_map(|n| (
            times(n),
            prop::collection::vec(vec3(100.0), n),
            prop::collection::vec(vec3(3.0), n),
        ))
    ) {
        let mut track = PoseTrack::default();
        for k in 0..t.len() {
            track.push(t[k], p[k], UnitQuaternion::from_euler_angles(e[k].x, e[k].y, e[k].z));
        }
        let mut buf = Vec::new();
        write_truth_to(&mut buf, &track).unwrap();
        let back = parse_truth(&buf[..], "mem").unwrap();
        prop_assert_eq!(back.t, track.t);
        prop_assert_eq!(back.p, track.p);
        for (a, b) in back.q.iter().zip(&track.q) {
            prop_assert!(a.angle_to(b) < 1e-15);
        }
    }

    #[test]
    fn encoder_and_contact_logs_round_trip(
        n_legs in 1usize..6,
        (t, q, c) in (1usize..30).prop_flat_map(|n| (
            times(n),
            prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 18), n),
            prop::collection::vec(prop::collection::vec(any::<bool>(), 6), n),
        ))
    ) {
        let enc: Vec<EncoderSample> = (0..t.len())
            .map(|k| EncoderSample {
                t: t[k],
                q: (0..n_legs).map(|i| JointAngles::new(q[k][3 * i], q[k][3 * i + 1], q[k][3 * i + 2])).collect(),
            })
            .collect();
        let mut buf = Vec::new();
        write_encoder_log_to(&mut buf, n_legs, &enc).unwrap();
        prop_assert_eq!(parse_encoder_log(&buf[..], "mem", n_legs).unwrap().rows, enc);

        let con: Vec<ContactSample> = (0..t.len())
            .map(|k| ContactSample { t: t[k], flags: c[k][..n_legs].to_vec() })
            .collect();
        let mut buf = Vec::new();
        write_contact_log_to(&mut buf, n_legs, &con).unwrap();
        prop_assert_eq!(parse_contact_log(&buf[..], "mem", n_legs).unwrap().rows, con);
    }

    #[test]
    fn state_log_round_trips(
        n_legs in 0usize..5,
        rows in prop::collection::vec((vec3(50.0), vec3(3.0), vec3(3.0), nonneg3(), nonneg3(), nonneg3(), vec3(50.0), nonneg3()), 1..20),
        t in times(20),
    ) {
        let records: Vec<StateRecord> = rows
            .iter()
            .enumerate()
            .map(|(k, r)| StateRecord {
                t: t[k],
                p: r.0,
                v: r.1,
                rpy: r.2,
                sigma_p: r.3,
                sigma_v: r.4,
                sigma_rpy: r.5,
                legs: (0..n_legs).map(|_| LegRecord { p: r.6, sigma_p: r.7 }).collect(),
            })
            .collect();
        let mut buf = Vec::new();
        write_state_log_to(&mut buf, &records).unwrap();
        prop_assert_eq!(parse_state_log(&buf[..], "mem").unwrap().rows, records);
    }

    #[test]
    fn parsers_never_panic_on_arbitrary_bytes(bytes in prop::collection::vec(any::<u8>(), 0..400), n in 1usize..6) {
        let _ = parse_imu_log(&bytes[..], "fuzz");
        let _ = parse_encoder_log(&bytes[..], "fuzz", n);
        let _ = parse_contact_log(&bytes[..], "fuzz", n);
        let _ = parse_truth(&bytes[..], "fuzz");
        let _ = parse_state_log(&bytes[..], "fuzz");
        let _ = parse_manifest(&bytes);
        if let Ok(text) = std::str::from_utf8(&bytes) {
            let _ = parse_config(text, "fuzz");
        }
    }

    #[test]
    fn parsers_never_panic_on_mutated_headers(
        tail in prop::collection::vec(prop::sample::select(b"0123456789.,-e\nnaif ".to_vec()), 0..300),
    ) {
        for header in ["t,gx,gy,gz,ax,ay,az\n", "t,px,py,pz,qw,qx,qy,qz\n", "t,c0,c1\n"] {
            let bytes: Vec<u8> = header.bytes().chain(tail.iter().copied()).collect();
            let _ = parse_imu_log(&bytes[..], "fuzz");
            let _ = parse_truth(&bytes[..], "fuzz");
            let _ = parse_contact_log(&bytes[..], "fuzz", 2);
        }
    }
}

fn corpus(target: &str) -> Vec<Vec<u8>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

#[test]
fn fuzz_corpus_seeds_are_accepted() {
    for b in corpus("imu_log") {
        assert!(parse_imu_log(&b[..], "seed").is_ok());
    }
    for target in ["encoder_log", "contact_log"] {
        for b in corpus(target) {
            let n = usize::from(b[0] % 6) + 1;
            let ok = if target == "encoder_log" {
                parse_encoder_log(&b[1..], "seed", n).is_ok()
            } else {
                parse_contact_log(&b[1..], "seed", n).is_ok()
            };
            assert!(ok, "{target}");
        }
    }
    for b in corpus("truth_log") {
        assert!(parse_truth(&b[..], "seed").is_ok());
    }
    for b in corpus("state_log") {
        assert!(parse_state_log(&b[..], "seed").is_ok());
    }
    for b in corpus("config") {
        let cfg = parse_config(std::str::from_utf8(&b).unwrap(), "seed").unwrap();
        assert_eq!(parse_config(&cfg.to_toml().unwrap(), "again").unwrap(), cfg);
    }
    for b in corpus("manifest") {
        assert!(parse_manifest(&b).is_ok());
    }
}

#[test]
fn simulated_dataset_survives_disk_round_trip() {
    let mut cfg = RunConfig::new(4);
    cfg.gait.duration = 3.0;
    let sim = simulate(&cfg.sim_config()).unwrap();
    let ds = Dataset::from_sim("rt", &sim, Some(cfg.clone()), cfg.gait.fs);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.name, ds.name);
    assert_eq!(back.body_imu, ds.body_imu);
    assert_eq!(back.leg_imus, ds.leg_imus);
    assert_eq!(back.encoders, ds.encoders);
    assert_eq!(back.contact, ds.contact);
    assert_eq!(back.config, ds.config);
    let (a, b) = (back.truth.unwrap(), ds.truth.unwrap());
    assert_eq!(a.t, b.t);
    assert_eq!(a.p, b.p);
    assert_eq!(back.leg_truth.len(), 4);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let cfg = parse_config(&text, &path.display().to_string()).unwrap();
        assert_eq!(parse_config(&cfg.to_toml().unwrap(), "again").unwrap(), cfg);
        n += 1;
    }
    assert!(n >= 4);
}
