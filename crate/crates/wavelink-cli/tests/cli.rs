//! End-to-end checks of the command line surface.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wavelink"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("wavelink-cli-{}-{}", std::process::id(), name));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn encode_then_decode_roundtrip() {
    let dir = workdir("codec");
    let payload = dir.join("payload.bin");
    let bytes: Vec<u8> = (0..500u32).map(|i| (i % 256) as u8).collect();
    std::fs::write(&payload, &bytes).unwrap();

    let iq = dir.join("packet.iq");
    let status = bin()
        .args(["encode", "--payload"])
        .arg(&payload)
        .arg("--out")
        .arg(&iq)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(iq.with_extension("iq.meta").exists());

    let recovered = dir.join("recovered.bin");
    let out = bin()
        .args(["decode", "--iq"])
        .arg(&iq)
        .arg("--out")
        .arg(&recovered)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"fcs_ok\":true"));
    assert_eq!(std::fs::read(&recovered).unwrap(), bytes);

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn decode_missing_file_fails_nonzero() {
    let status = bin()
        .args(["decode", "--iq", "/nonexistent/never.iq"])
        .status()
        .unwrap();
    assert!(!status.success());
}

#[test]
fn simulate_is_reproducible() {
    let dir_a = workdir("sim-a");
    let dir_b = workdir("sim-b");
    for dir in [&dir_a, &dir_b] {
        let status = bin()
            .args([
                "simulate",
                "--nodes",
                "2",
                "--seed",
                "42",
                "--payload-octets",
                "64",
                "--packets",
                "1",
                "--out",
            ])
            .arg(dir)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(dir_a.join("events.jsonl")).unwrap();
    let b = std::fs::read(dir_b.join("events.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "event logs must be byte-identical for equal seeds");

    std::fs::remove_dir_all(&dir_a).ok();
    std::fs::remove_dir_all(&dir_b).ok();
}

#[test]
fn simulate_reads_config_file() {
    let dir = workdir("sim-cfg");
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        r#"
version = 1

[sim]
rng_seed = 5
packets_per_dtx = 1
payload_octets = 32

[channel]
gains = [[0.0, 1.0], [1.0, 0.0]]

[[node]]
role = "dtx"
address = "02:00:00:00:00:01"
peer = "02:00:00:00:00:02"
[node.mac]
difs_slots = 3
sifs_slots = 2
cw_min = 2
ack_timeout_slots = 60

[[node]]
role = "drx"
address = "02:00:00:00:00:02"
peer = "02:00:00:00:00:01"
[node.mac]
difs_slots = 3
sifs_slots = 2
cw_min = 2
ack_timeout_slots = 60
"#,
    )
    .unwrap();

    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("results"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("results/metrics.json").exists());
    assert!(dir.join("results/packets.csv").exists());
    let metrics = std::fs::read_to_string(dir.join("results/metrics.json")).unwrap();
    assert!(metrics.contains("\"packets_acked\": 1"));

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bench_xcorr_emits_csv() {
    let out = bin()
        .args(["bench-xcorr", "--lengths", "64,256", "--reps", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 3); // header + one row per length

    let status = bin()
        .args(["bench-xcorr", "--lengths", "8"])
        .status()
        .unwrap();
    assert!(!status.success(), "length below 16 must be rejected");
}

#[test]
fn calibrate_reports_threshold() {
    let out = bin()
        .args(["calibrate", "--noise-power", "0.01", "--frames", "50"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    let threshold = v["energy_threshold"].as_f64().unwrap();
    let expected = 3.0 * 1408.0 * 0.01;
    assert!((threshold - expected).abs() < 0.1 * expected, "{}", threshold);
}
