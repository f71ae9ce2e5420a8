use std::path::Path;
use std::process::{Command, Output};

use chbell::dire::{read_bits, write_bits, Bits};
use chbell::CountsTable;
use serde_json::Value;
use tempfile::TempDir;

fn chbell(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chbell"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    serde_json::from_slice(&o.stdout).expect("JSON on stdout")
}

fn write_table1(dir: &Path) -> String {
    let p = dir.join("table1.json");
    std::fs::write(&p, CountsTable::table1().to_json().unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn analyze_published_counts() {
    let d = TempDir::new().unwrap();
    let t = write_table1(d.path());
    let v = stdout_json(&chbell(d.path(), &["analyze", &t]));
    let b = v["B"].as_f64().unwrap();
    assert!((b - 5.4369e-5).abs() < 1e-8);
    assert!((v["B_prime"].as_f64().unwrap() - 1.016).abs() < 1e-3);
    assert!(v["significance"].as_f64().unwrap() > 5.0);
    let v = stdout_json(&chbell(d.path(), &["analyze", &t, "--sigma", "7.0e-6"]));
    assert!((v["significance"].as_f64().unwrap() - 7.7).abs() < 0.1);
    assert!(d.path().join("out/analyze.manifest.json").exists());
}

#[test]
fn adversarial_stream_fools_only_event_windows() {
    let d = TempDir::new().unwrap();
    assert!(chbell(d.path(), &["lhv-demo", "--quiet"]).status.success());
    let out = d.path().join("out");
    let stream = out.join("timed_emitter.csv");
    let settings = out.join("timed_emitter_settings.txt");
    let (stream, settings) = (stream.to_str().unwrap(), settings.to_str().unwrap());

    let o = chbell(
        d.path(),
        &[
            "analyze",
            stream,
            "--settings",
            settings,
            "--window",
            "event:150",
        ],
    );
    assert_eq!(stdout_json(&o)["B"].as_f64().unwrap(), 1.0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("loophole"));

    let o = chbell(
        d.path(),
        &[
            "analyze",
            stream,
            "--settings",
            settings,
            "--window",
            "clock",
        ],
    );
    assert!(stdout_json(&o)["B"].as_f64().unwrap() <= 0.0);

    let o = chbell(d.path(), &["analyze", stream]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn optimize_ideal_gives_chsh_angles() {
    let d = TempDir::new().unwrap();
    let v = stdout_json(&chbell(
        d.path(),
        &["optimize", "--eta", "1", "--bg", "0", "--fix-r", "1"],
    ));
    let s = &v["settings"];
    let got = [
        s["a"].as_f64().unwrap(),
        s["a_prime"].as_f64().unwrap(),
        s["b"].as_f64().unwrap(),
        s["b_prime"].as_f64().unwrap(),
    ];
    let want = [-11.25, 33.75, 11.25, -33.75];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 0.01, "{got:?}");
    }
}

fn sweep_rows(d: &Path, eta: &str) -> Vec<(f64, f64)> {
    let o = chbell(d, &["sweep", "--eta", eta, "--bg", "0.002", "--quiet"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(d.join("out/sweep.csv")).unwrap();
    csv.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[0], f[1])
        })
        .collect()
}

#[test]
fn sweep_violation_window() {
    let d = TempDir::new().unwrap();
    let rows = sweep_rows(d.path(), "0.75");
    let near = rows
        .iter()
        .min_by(|a, b| (a.0 - 0.26).abs().total_cmp(&(b.0 - 0.26).abs()))
        .unwrap();
    assert!(near.1 > 1.0, "{near:?}");
    assert!(rows.last().unwrap().1 < 1.0);
    let rows = sweep_rows(d.path(), "0.5");
    assert!(rows.iter().all(|r| r.1 <= 1.0));
}

#[test]
fn dire_reports() {
    let d = TempDir::new().unwrap();
    let t = write_table1(d.path());
    let v = stdout_json(&chbell(
        d.path(),
        &["dire", &t, "--seconds", "10800", "--policy", "sha-half"],
    ));
    assert!((v["rate_bits_per_s"].as_f64().unwrap() - 0.4).abs() < 0.02);

    let v = stdout_json(&chbell(
        d.path(),
        &[
            "dire",
            &t,
            "--seconds",
            "10800",
            "--policy",
            "trevisan-sized",
            "--epsilon",
            "1e-9",
        ],
    ));
    let bits = v["extractable_bits"].as_u64().unwrap();
    let seed = v["seed_bits"].as_u64().unwrap();
    assert!((8500..8700).contains(&bits), "{bits}");
    assert!((25_500..26_500).contains(&seed), "{seed}");

    let local = d.path().join("local.json");
    let ideal =
        chbell::lhv::counts_from_strategy(&chbell::lhv::LhvStrategy::ideal_detector_table(), 4000)
            .unwrap();
    std::fs::write(&local, ideal.to_json().unwrap()).unwrap();
    let v = stdout_json(&chbell(
        d.path(),
        &["dire", local.to_str().unwrap(), "--seconds", "1"],
    ));
    assert_eq!(v["extractable_bits"].as_u64().unwrap(), 0);
}

#[test]
fn dire_extracts_bits() {
    let d = TempDir::new().unwrap();
    let t = write_table1(d.path());
    let raw: Bits = Bits::from_vec(
        (0..20_000u32)
            .map(|i| (i.wrapping_mul(2_654_435_761) >> 13) as u8)
            .collect(),
    );
    let seed: Bits = Bits::from_vec(
        (0..30_000u32)
            .map(|i| (i.wrapping_mul(40_503) >> 7) as u8)
            .collect(),
    );
    for (name, bits) in [("raw.bits", &raw), ("seed.bits", &seed)] {
        let mut buf = Vec::new();
        write_bits(&mut buf, bits).unwrap();
        std::fs::write(d.path().join(name), buf).unwrap();
    }
    let raw_path = d.path().join("raw.bits");
    let seed_path = d.path().join("seed.bits");
    let args = [
        "dire",
        &t,
        "--seconds",
        "10800",
        "--policy",
        "hash-extract",
        "--epsilon",
        "1e-6",
        "--extract",
        raw_path.to_str().unwrap(),
        "--seed-file",
        seed_path.to_str().unwrap(),
    ];
    let v = stdout_json(&chbell(d.path(), &args));
    let f = std::fs::File::open(d.path().join("out/extracted.bits")).unwrap();
    let out = read_bits(f).unwrap();
    assert!(out.len() as f64 <= v["raw_entropy_bits"].as_f64().unwrap());
    assert!(out.len() > 8000, "{}", out.len());

    let bad = chbell(
        d.path(),
        &[
            "dire",
            &t,
            "--seconds",
            "1",
            "--policy",
            "sha-half",
            "--extract",
            raw_path.to_str().unwrap(),
            "--seed-file",
            seed_path.to_str().unwrap(),
        ],
    );
    assert_eq!(bad.status.code(), Some(2));
}

fn config(dir: &Path, n_blocks: usize) -> String {
    let p = dir.join(format!("cfg{n_blocks}.json"));
    let cfg = serde_json::json!({
        "state": {"kind": "eberhard-pure", "r": 0.26},
        "settings": {"a": 3.8, "a_prime": -25.2, "b": -3.8, "b_prime": 25.2},
        "trials_per_block": 25000,
        "n_blocks": n_blocks,
        "rng_seed": 1
    });
    std::fs::write(&p, cfg.to_string()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn simulate_is_reproducible() {
    let d = TempDir::new().unwrap();
    let cfg = config(d.path(), 45);
    let run = |sub: &str| {
        let out = d.path().join(sub);
        let o = Command::new(env!("CARGO_BIN_EXE_chbell"))
            .args([
                "simulate",
                &cfg,
                "--timetags",
                "--seed",
                "9",
                "--quiet",
                "--out",
            ])
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["blocks.csv", "counts.json", "settings.txt", "timetags.bin"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let csv = std::fs::read_to_string(a.join("blocks.csv")).unwrap();
    assert_eq!(csv.lines().count(), 46);
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(a.join("simulate.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"].as_u64(), Some(9));

    // The timetags carry the same clicks as the block records.
    let o = Command::new(env!("CARGO_BIN_EXE_chbell"))
        .args(["analyze"])
        .arg(a.join("timetags.bin"))
        .arg("--settings")
        .arg(a.join("settings.txt"))
        .args(["--trials-per-block", "25000", "--out"])
        .arg(d.path().join("c"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(d.path().join("c/counts.json")).unwrap(),
        std::fs::read(a.join("counts.json")).unwrap()
    );
}

#[test]
fn errors_map_to_exit_codes() {
    let d = TempDir::new().unwrap();
    let o = chbell(d.path(), &["simulate", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let bad = d.path().join("bad.json");
    std::fs::write(&bad, r#"{"state": {"kind": "eberhard-pure", "r": 0.3}, "settings": {"a": 0, "a_prime": 1, "b": 2, "b_prime": 3}, "n_blocks": 4, "det": {"eta_a": 1.5}}"#).unwrap();
    let o = chbell(d.path(), &["simulate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eta_a"));

    let o = chbell(d.path(), &["sweep", "--eta", "0.8", "--r-grid", "0:2:0.5"]);
    assert_eq!(o.status.code(), Some(2));

    let o = chbell(d.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}
