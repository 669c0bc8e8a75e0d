use std::path::Path;
use std::process::{Command, Output};

fn ell(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ell"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str) {
    let o = ell(&[
        "synth",
        "--out-dir",
        p(dir),
        "--seed",
        seed,
        "--entities",
        "6",
        "--retail",
        "200",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_then_run_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    synth(&data, "3");
    assert!(data.join("ground_truth.json").exists());
    let o = ell(&["run", "--data-dir", p(&data), "--out-dir", p(&out), "--token", "SYN3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in [
        "cleaning_report.json",
        "detector_groups.json",
        "groupset.json",
        "indicator_report.json",
        "radar.json",
        "radar.svg",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("indicator_report.json")).unwrap()).unwrap();
    assert_eq!(report["metadata"]["token"], "SYN3");
}

#[test]
fn stage_commands_match_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let staged = tmp.path().join("staged");
    let full = tmp.path().join("full");
    synth(&data, "4");
    let cleaned = staged.join("cleaned");
    let steps: Vec<Vec<&str>> = vec![
        vec!["clean", "--data-dir", p(&data), "--out-dir", p(&staged)],
        vec!["detect", "--data-dir", p(&cleaned), "--out-dir", p(&staged)],
        vec!["cluster", "--data-dir", p(&cleaned), "--out-dir", p(&staged)],
        vec!["metrics", "--data-dir", p(&cleaned), "--out-dir", p(&staged)],
        vec!["report", "--out-dir", p(&staged)],
    ];
    for step in &steps {
        let o = ell(step);
        assert!(o.status.success(), "{step:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(ell(&["run", "--data-dir", p(&data), "--out-dir", p(&full)])
        .status
        .success());
    for name in [
        "cleaning_report.json",
        "detector_groups.json",
        "groupset.json",
        "indicator_report.json",
        "radar.json",
        "radar.svg",
    ] {
        assert!(
            std::fs::read(staged.join(name)).unwrap() == std::fs::read(full.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn missing_market_is_a_metrics_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "5");
    std::fs::remove_file(data.join("market.json")).unwrap();
    let o = ell(&["run", "--data-dir", p(&data), "--out-dir", p(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[metrics]") && err.contains("market"), "{err}");
    assert!(tmp.path().join("out/groupset.json.partial").exists());
}

#[test]
fn bad_usage_exits_two() {
    assert_eq!(ell(&["run", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(ell(&["run", "--exclude-flags", "whale"]).status.code(), Some(2));
    assert_eq!(ell(&["compare", "only_one.json"]).status.code(), Some(2));
    assert_eq!(ell(&[]).status.code(), Some(2));
}

#[test]
fn bad_config_is_a_config_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[cluster]\neps = -2.0\n").unwrap();
    let o = ell(&["run", "--config", p(&cfg), "--data-dir", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[config]"));
}

#[test]
fn sequential_jobs_give_identical_output() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "6");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(ell(&["run", "--data-dir", p(&data), "--out-dir", p(&a)])
        .status
        .success());
    assert!(ell(&["run", "--jobs", "1", "--data-dir", p(&data), "--out-dir", p(&b)])
        .status
        .success());
    for name in ["detector_groups.json", "groupset.json", "indicator_report.json"] {
        assert!(
            std::fs::read(a.join(name)).unwrap() == std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn compare_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for (seed, token) in [("7", "AAA"), ("8", "BBB"), ("9", "CCC")] {
        let data = tmp.path().join(format!("data{seed}"));
        let out = tmp.path().join(format!("out{seed}"));
        synth(&data, seed);
        assert!(
            ell(&["run", "--data-dir", p(&data), "--out-dir", p(&out), "--token", token])
                .status
                .success()
        );
        reports.push(out.join("indicator_report.json"));
    }
    let cmp = tmp.path().join("cmp");
    let mut args = vec!["compare", "--out-dir", p(&cmp)];
    args.extend(reports.iter().map(|r| p(r)));
    let o = ell(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 7);
    assert!(cmp.join("comparison.txt").exists() && cmp.join("comparison_radar.json").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("smallest adjusted radar area"));
}

#[test]
fn ingest_normalises_local_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("norm");
    synth(&data, "10");
    let o = ell(&["ingest", "--data-dir", p(&data), "--out-dir", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(data.join("transfers.csv")).unwrap(),
        std::fs::read(out.join("transfers.csv")).unwrap()
    );
}
