use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn wavetrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavetrack"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn write_json(path: &Path, value: &Value) {
    fs::write(path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn synth_city(dir: &Path, waves: Value, seed: u64) -> PathBuf {
    let cfg = dir.join("synth.json");
    write_json(
        &cfg,
        &json!({
            "n_regions": 1,
            "n_weeks": 520,
            "alpha": 0.5,
            "noise_sigma": 0.2,
            "baseline": 3.0,
            "waves": waves,
            "seed": seed,
            "emit": "events"
        }),
    );
    let out = dir.join("city");
    let res = wavetrack(&["synth", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", stderr(&res));
    out
}

fn citylevel(dir: &Path, events: &Path, analysis: Value) -> PathBuf {
    let cfg = dir.join("citylevel.json");
    write_json(
        &cfg,
        &json!({ "inputs": { "events": events }, "analysis": analysis, "seed": 3 }),
    );
    let out = dir.join("citylevel");
    let res = wavetrack(&["citylevel", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", stderr(&res));
    out
}

#[test]
fn analyze_writes_hashed_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = wavetrack(&[
        "analyze",
        "--config",
        fixture("analyze.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    for name in [
        "partition.json",
        "global_spectra.csv",
        "composed_spectrum.csv",
        "composed_band_0.8-1.1.csv",
        "runs.csv",
        "fits.json",
        "manifest.json",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    assert!(fs::read_dir(out.join("series")).unwrap().count() > 0);

    let m = manifest(&out);
    let files = m["files"].as_object().unwrap();
    for (rel, digest) in files {
        let bytes = fs::read(out.join(rel)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), digest.as_str().unwrap(), "{rel}");
    }
    assert_eq!(m["command"], "analyze");
    assert_eq!(m["inputs"].as_object().unwrap().len(), 2);
    assert_eq!(
        fs::read(out.join("composed_spectrum.csv")).unwrap(),
        fs::read(fixture("golden_composed_spectrum.csv")).unwrap()
    );
}

#[test]
fn missing_events_path_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    write_json(&cfg, &json!({ "inputs": { "events": "nowhere.csv" } }));
    let res = wavetrack(&["analyze", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("inputs.events"), "{}", stderr(&res));
    assert!(!tmp.path().join("o").exists());

    write_json(&cfg, &json!({ "inputs": {} }));
    let res = wavetrack(&["analyze", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("events"), "{}", stderr(&res));
}

#[test]
fn bad_config_is_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    let events = fixture("events.csv");
    write_json(&cfg, &json!({ "inputs": { "events": events }, "analysis": { "sj": 2.0 } }));
    let res = wavetrack(&["citylevel", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));

    write_json(&cfg, &json!({ "inputs": { "events": events }, "analysis": { "dj": 1.5 } }));
    let res = wavetrack(&["citylevel", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("analysis.dj"), "{}", stderr(&res));
}

#[test]
fn zero_events_is_an_analysis_error_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let events = tmp.path().join("events.csv");
    fs::write(&events, "date,lat,lon,category\n").unwrap();
    let cfg = tmp.path().join("cfg.json");
    write_json(&cfg, &json!({ "inputs": { "events": events } }));
    let out = tmp.path().join("o");
    let res = wavetrack(&["citylevel", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let last = stderr(&res).lines().last().unwrap().to_string();
    let err: Value = serde_json::from_str(&last).unwrap();
    assert_eq!(err["kind"], "analysis");
    assert!(!out.exists());
}

#[test]
fn citylevel_finds_stationary_annual_wave() {
    let tmp = tempfile::tempdir().unwrap();
    let waves = json!([{
        "period_weeks": 52.0,
        "amplitude": 0.3,
        "schedule": [{ "region_id": 0, "start_week": 1, "end_week": 520 }]
    }]);
    let city = synth_city(tmp.path(), waves, 11);
    let out = citylevel(tmp.path(), &city.join("events.csv"), json!({ "method": "analytic" }));

    let rows = read_csv(&out.join("band_0.8-1.1.csv"));
    let valid: Vec<_> = rows.iter().filter(|r| &r[3] == "true").collect();
    assert!(valid.len() > 100);
    let hits = valid.iter().filter(|r| &r[4] == "true").count();
    assert!(hits as f64 >= 0.95 * valid.len() as f64, "{hits} of {}", valid.len());
}

#[test]
fn citylevel_null_city_is_quiet() {
    let tmp = tempfile::tempdir().unwrap();
    let city = synth_city(tmp.path(), json!([]), 12);
    let out = citylevel(
        tmp.path(),
        &city.join("events.csv"),
        json!({ "method": "montecarlo", "surrogates": "preprocessed", "replicates": 300 }),
    );
    let rows = read_csv(&out.join("global_spectrum.csv"));
    let quiet = rows.iter().filter(|r| &r[4] == "false").count();
    assert!(quiet as f64 >= 0.9 * rows.len() as f64, "{quiet} of {}", rows.len());
}

#[test]
fn partition_without_events() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    write_json(
        &cfg,
        &json!({ "inputs": { "weights": fixture("weights.csv") }, "analysis": { "r_values": [16] } }),
    );
    let out = tmp.path().join("o");
    let res = wavetrack(&["partition", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", stderr(&res));
    let p: Value = serde_json::from_slice(&fs::read(out.join("partition.json")).unwrap()).unwrap();
    assert_eq!(p.as_array().unwrap().len(), 16);
    assert!(!out.join("sweep.json").exists());

    write_json(
        &cfg,
        &json!({ "inputs": { "weights": fixture("weights.csv") }, "analysis": { "r_values": [4, 8] } }),
    );
    let res = wavetrack(&["partition", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("p").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let res = wavetrack(&["synth", "--config", fixture("synth.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(res.status.success(), "{}", stderr(&res));
    }
    assert_eq!(manifest(&a), manifest(&b));
    assert_eq!(fs::read(a.join("events.csv")).unwrap(), fs::read(fixture("events.csv")).unwrap());
    let truth: Value = serde_json::from_slice(&fs::read(a.join("ground_truth.json")).unwrap()).unwrap();
    assert!(truth.is_object());
}

#[test]
fn seed_override_changes_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: Option<&str>, name: &str| {
        let out = tmp.path().join(name);
        let config = fixture("synth.json");
        let mut args = vec!["synth", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let res = wavetrack(&args);
        assert!(res.status.success(), "{}", stderr(&res));
        (manifest(&out), fs::read(out.join("series.csv")).unwrap())
    };
    let (base, base_series) = run(None, "base");
    let (other, other_series) = run(Some("99"), "other");
    assert_ne!(base["config_sha256"], other["config_sha256"]);
    assert_ne!(base_series, other_series);
}
