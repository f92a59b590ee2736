use std::path::Path;
use std::process::{Command, Output};

fn moodsense(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moodsense"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const CONFIG: &str = "\
[analysis.forest]
replicates = 4
[analysis.forest.forest]
n_trees = 20
[simulate]
n_participants = 6
days = 12
";

#[test]
fn simulate_analyze_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("moodsense.toml"), CONFIG).unwrap();
    let common = ["--config", "moodsense.toml", "--seed", "3"];

    let out = ok(&moodsense(d, &[&common[..], &["simulate", "--ingest"]].concat()));
    assert!(out.contains("simulated 6 participants"), "{out}");
    assert!(d.join("out/cohort/observations.csv").exists());
    assert!(d.join("out/cohort/ground_truth.json").exists());

    let out = ok(&moodsense(d, &[&common[..], &["clean"]].concat()));
    assert!(out.contains("analysis rows"), "{out}");
    let rows = std::fs::read_to_string(d.join("out/feature_rows.csv")).unwrap();
    assert!(rows.starts_with("participant_id,timestamp,happiness,activation,mood_state,avg_bpm"));

    for analysis in ["correlations", "glmm", "forest"] {
        ok(&moodsense(d, &[&common[..], &["--out-dir", "run1", "analyze", analysis]].concat()));
        ok(&moodsense(d, &[&common[..], &["--out-dir", "run2", "analyze", analysis]].concat()));
        for ext in ["txt", "csv"] {
            let a = std::fs::read(d.join(format!("run1/{analysis}.{ext}"))).unwrap();
            let b = std::fs::read(d.join(format!("run2/{analysis}.{ext}"))).unwrap();
            assert!(!a.is_empty());
            assert_eq!(a, b, "{analysis}.{ext} differs between runs");
        }
    }
    let corr = std::fs::read_to_string(d.join("run1/correlations.txt")).unwrap();
    assert!(corr.contains("16. Sportiness"), "{corr}");

    let out = ok(&moodsense(d, &[&common[..], &["export-map", "--participant", "P01"]].concat()));
    assert!(out.starts_with("wrote "), "{out}");
    let map: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/map.geojson")).unwrap()).unwrap();
    assert_eq!(map["type"], "FeatureCollection");
    assert!(map["features"].as_array().unwrap().iter().all(|f| f["properties"]["participant_id"] == "P01"));
}

#[test]
fn ingest_reports_rejected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("obs.csv"),
        "participant_id,timestamp,bpm,light_level,acceleration,vmc,latitude,longitude,altitude\n\
         P01,2017-01-10T15:00:00Z,70,1.0,0.2,50,,,\n\
         P01,2017-01-10T15:01:00Z,70,7.0,0.2,50,,,\n\
         P01,2017-01-10T15:02:00Z,-4,1.0,0.2,50,,,\n",
    )
    .unwrap();
    let out = moodsense(d, &["ingest", "obs.csv", "--kind", "observations"]);
    let stdout = ok(&out);
    assert!(stdout.contains("1 accepted, 2 rejected"), "{stdout}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3") && stderr.contains("line 4"), "{stderr}");

    std::fs::write(d.join("bad.csv"), "who,when\nP01,now\n").unwrap();
    let out = moodsense(d, &["ingest", "bad.csv", "--kind", "observations"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("header"));
}

#[test]
fn empty_store_fails_with_a_clear_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = moodsense(dir.path(), &["analyze", "correlations"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no analyzable rows"));
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[analysis]\nmin_bpm = -1\n").unwrap();
    let out = moodsense(dir.path(), &["--config", "c.toml", "clean"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("min_bpm"));
}
