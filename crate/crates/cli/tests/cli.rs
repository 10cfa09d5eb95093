use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rrdps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrdps"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, content: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, content).unwrap();
    p.to_str().unwrap().to_string()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const SMALL: &str = "block_size = 256\nblocks = 3000\nseed = 7\nmu_alice = 0.02\nmu_bob = 0.02\ndetector_efficiency = 0.5\n";

#[test]
fn simulate_writes_header_and_digest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let out = dir.path().join("out");
    let r = rrdps(&["simulate", "--config", &cfg, "--out", path(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let events = fs::read_to_string(out.join("events.csv")).unwrap();
    assert_eq!(events.lines().next(), Some("block,slot,detector"));
    let m = manifest(&out);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["outputs"][0]["file"], "events.csv");
    assert_eq!(m["outputs"][0]["bytes"], events.len() as u64);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            assert_eq!(
                code(&rrdps(&["simulate", "--config", &cfg, "--out", path(&out)])),
                0
            );
            let events = out.join("events.csv");
            let r = rrdps(&[
                "analyze",
                "--config",
                &cfg,
                "--events",
                path(&events),
                "--out",
                path(&out.join("an")),
            ]);
            assert!(matches!(code(&r), 0 | 4));
            (out, r.stdout)
        })
        .collect();
    let (a, b) = (&runs[0].0, &runs[1].0);
    for file in ["events.csv", "an/tally.json", "an/report.json"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    assert_eq!(runs[0].1, runs[1].1);
    assert_eq!(manifest(a)["outputs"], manifest(b)["outputs"]);
}

#[test]
fn scan_and_oracle_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "scan.toml",
        "seed = 3\ntrials = 2\nsegment_slots = 1024\nsegments = 512\ndistances_km = [0.0]\n",
    );
    for name in ["s1", "s2"] {
        let out = dir.path().join(name);
        let r = rrdps(&[
            "scan",
            "--config",
            &cfg,
            "--l-list",
            "256,1024",
            "--out",
            path(&out),
        ]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    for file in ["curve.csv", "summary.csv", "optima.csv"] {
        let a = fs::read(dir.path().join("s1").join(file)).unwrap();
        assert_eq!(
            a,
            fs::read(dir.path().join("s2").join(file)).unwrap(),
            "{file}"
        );
    }
    let curve = fs::read_to_string(dir.path().join("s1/curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(
        lines.next(),
        Some("distance_km,L,trial,N_em,N,e_b,v_th,e_src,e_p,K,key_rate_per_pulse")
    );
    // two block sizes, two trials
    assert_eq!(lines.count(), 4);
    let optima = fs::read_to_string(dir.path().join("s1/optima.csv")).unwrap();
    assert_eq!(
        optima.lines().next(),
        Some("distance_km,mu,optimal_L,v_th,e_b,e_ph")
    );

    for name in ["o1", "o2"] {
        let r = rrdps(&[
            "oracle",
            "--l-max",
            "5",
            "--out",
            path(&dir.path().join(name)),
        ]);
        assert_eq!(code(&r), 0);
    }
    let a = fs::read(dir.path().join("o1/oracle.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("o2/oracle.json")).unwrap());
    let report: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["all_within_tolerance"], true);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = write(dir.path(), "a.toml", "blocksize = 5\n");
    assert_eq!(
        code(&rrdps(&[
            "simulate",
            "--config",
            &bad_key,
            "--out",
            path(dir.path())
        ])),
        2
    );
    let bad_value = write(dir.path(), "b.toml", "visibility = 1.5\n");
    assert_eq!(
        code(&rrdps(&[
            "simulate",
            "--config",
            &bad_value,
            "--out",
            path(dir.path())
        ])),
        2
    );
    let bad_f = write(dir.path(), "c.toml", "ec_efficiency = 0.9\n");
    assert_eq!(
        code(&rrdps(&[
            "simulate",
            "--config",
            &bad_f,
            "--out",
            path(dir.path())
        ])),
        2
    );
    assert_eq!(code(&rrdps(&["oracle", "--l-max", "9"])), 2);
    assert!(!dir.path().join("events.csv").exists());
}

#[test]
fn malformed_events_exit_3_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let events = write(
        dir.path(),
        "events.csv",
        "block,slot,detector\n0,1,C\n0,2,X\n",
    );
    let out = dir.path().join("out");
    let r = rrdps(&[
        "analyze",
        "--blocks",
        "2",
        "--events",
        &events,
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&r), 3);
    assert!(String::from_utf8_lossy(&r.stderr).contains("events.csv:3"));
    assert!(!out.join("report.json").exists() && !out.join("tally.json").exists());
}

#[test]
fn starved_run_exits_4_and_keeps_report() {
    let dir = tempfile::tempdir().unwrap();
    let events = write(dir.path(), "events.csv", "block,slot,detector\n");
    let out = dir.path().join("out");
    let r = rrdps(&[
        "analyze",
        "--blocks",
        "10",
        "--events",
        &events,
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&r), 4);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "no_key");
    assert_eq!(report["N"], 0);
    assert_eq!(report["N_em"], 10);
}

#[test]
fn zero_intensity_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "dark.toml",
        "block_size = 64\nblocks = 500\nmu_alice = 0.0\nmu_bob = 0.0\ndark_rate_hz = 0.0\n",
    );
    let out = dir.path().join("out");
    assert_eq!(
        code(&rrdps(&["simulate", "--config", &cfg, "--out", path(&out)])),
        0
    );
    assert_eq!(
        fs::read_to_string(out.join("events.csv")).unwrap(),
        "block,slot,detector\n"
    );
}

#[test]
fn event_count_matches_click_probability() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = rrdps(&[
        "simulate",
        "--blocks",
        "10000",
        "--seed",
        "1",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&r), 0);
    let rows = fs::read_to_string(out.join("events.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    let cfg = rrdps_core::ExperimentConfig::default();
    let trials = 10_000.0 * cfg.block_size as f64 * 2.0;
    let p = cfg.expected_click_probability();
    let mean = trials * p;
    // the shared overall phase per block correlates clicks; allow for it
    let sigma = (trials * p).sqrt() * 2.0;
    assert!(
        (rows as f64 - mean).abs() < 5.0 * sigma,
        "{rows} rows, expected {mean} +- {sigma}"
    );
}

#[test]
fn analyze_accepts_tally_and_phase_files() {
    let dir = tempfile::tempdir().unwrap();
    let events = write(
        dir.path(),
        "events.csv",
        "block,slot,detector\n0,0,D\n0,5,D\n1,1,C\n1,2,D\n",
    );
    let phases = write(
        dir.path(),
        "phases.csv",
        "block,phases\n0,01000010\n1,01000000\n",
    );
    let cfg = write(
        dir.path(),
        "l8.toml",
        "block_size = 8\nblocks = 2\ndead_time_ns = 0.0\n",
    );
    let out = dir.path().join("out");
    let r = rrdps(&[
        "analyze",
        "--config",
        &cfg,
        "--events",
        &events,
        "--phases",
        &phases,
        "--vth",
        "1",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&r), 4);
    let report: Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(report["N"], 2);
    assert_eq!(report["tally"]["errors"], 0);
    assert_eq!(report["v_th"], 1);

    let again = rrdps(&[
        "analyze",
        "--config",
        &cfg,
        "--tally",
        path(&out.join("tally.json")),
        "--vth",
        "1",
    ]);
    assert_eq!(code(&again), 4);
    assert_eq!(again.stdout, r.stdout);
}
