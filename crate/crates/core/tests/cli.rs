use std::fs;
use std::path::Path;

use chainlab::cli::*;
use sha2::{Digest, Sha256};

fn run_cli(args: &[&str]) -> i32 {
    let mut all = vec!["chainlab"];
    all.extend_from_slice(args);
    main_with_args(all)
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn validate_happy_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let code = run_cli(&["run", "--set", "scenario=validate", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.scenario, "validate");
    assert_eq!(m.seed, 3);
    let ids: Vec<usize> = m.checks.iter().map(|c| c.id).collect();
    assert_eq!(ids, vec![0, 1, 13]);
    assert!(m.checks.iter().all(|c| c.passed));
    assert!(m.files.iter().any(|f| f.name == "model_assumptions.csv"));
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    fs::write(&cfg_path, "scenario = \"validate\"\nseed = 5\n\n[model]\nname = \"linear\"\nn = 3\nd = 1\n").unwrap();
    let cfg = load_config(Some(&cfg_path), None, None, &["seed=9".into(), "cocycle=1e-6".into()]).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.scenario, Scenario::Validate);
    assert_eq!(cfg.suite.tolerances.get("cocycle"), Some(&1e-6));
    assert!(cfg.out.ends_with("validate-9"));
    let cfg = load_config(Some(&cfg_path), Some(11), None, &[]).unwrap();
    assert_eq!(cfg.seed, 11);
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = out.to_str().unwrap();
    assert_eq!(run_cli(&["run", "--set", "scenario=validate", "--out", o]), 2);
    assert_eq!(run_cli(&["run", "--seed", "1", "--out", o]), 2);
    assert_eq!(run_cli(&["run", "--set", "scenario=nope", "--seed", "1", "--out", o]), 2);
    assert_eq!(run_cli(&["run", "--set", "scenario=validate", "--set", "no_such_tol=1", "--seed", "1", "--out", o]), 2);
    assert_eq!(run_cli(&["run", "--config", tmp.path().join("missing.toml").to_str().unwrap(), "--seed", "1"]), 2);
    assert_eq!(run_cli(&["frobnicate"]), 2);
    let err = load_config(None, None, None, &["scenario=validate".into()]).unwrap_err();
    assert!(err.to_string().contains("missing required field 'seed'"), "{err}");
    assert!(!out.join(MANIFEST).exists());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, jobs) in [(&a, "1"), (&b, "2")] {
        let code = run_cli(&["run", "--set", "scenario=validate", "--seed", "42", "--out", dir.to_str().unwrap(), "--jobs", jobs]);
        assert_eq!(code, 0);
    }
    assert_eq!(listing(&a), listing(&b));
}

#[test]
fn report_lists_every_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(run_cli(&["run", "--set", "scenario=validate", "--seed", "1", "--out", out.to_str().unwrap()]), 0);
    let text = report(&out).unwrap();
    for id in ["exponent-bookkeeping", "model-assumptions"] {
        assert!(text.contains(id), "{text}");
    }
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 3);
    assert!(text.ends_with("3/3 checks passed\n"));
    assert_eq!(run_cli(&["report", out.to_str().unwrap()]), 0);

    let csv = out.join("model_assumptions.csv");
    fs::write(&csv, "tampered\n").unwrap();
    assert!(report(&out).unwrap().contains("[MODIFIED] model_assumptions.csv"));
    fs::remove_file(&csv).unwrap();
    assert!(report(&out).unwrap().contains("[MISSING] model_assumptions.csv"));
}

#[test]
fn report_on_empty_or_corrupt_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let err = report(tmp.path()).unwrap_err();
    assert!(err.to_string().contains("no manifest.json"), "{err}");
    assert_eq!(run_cli(&["report", tmp.path().to_str().unwrap()]), 2);
    fs::write(tmp.path().join(MANIFEST), "{ not json").unwrap();
    assert!(report(tmp.path()).unwrap_err().to_string().contains("corrupt"));
}

#[test]
fn injected_failure_marks_exactly_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let code = run_cli(&["run", "--set", "scenario=validate", "--set", "det=-1", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 1);
    let text = report(&out).unwrap();
    let fails: Vec<&str> = text.lines().filter(|l| l.starts_with("[FAIL]")).collect();
    assert_eq!(fails.len(), 1, "{text}");
    assert!(fails[0].contains("resolvent"), "{}", fails[0]);
    assert!(text.ends_with("2/3 checks passed\n"));
}

#[test]
fn manifest_covers_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(run_cli(&["run", "--set", "scenario=validate", "--seed", "8", "--out", out.to_str().unwrap()]), 0);
    let m = read_manifest(&out).unwrap();
    let on_disk: Vec<String> = listing(&out).into_iter().map(|(n, _)| n).filter(|n| n != MANIFEST).collect();
    let mut listed: Vec<String> = m.files.iter().map(|f| f.name.clone()).collect();
    listed.sort();
    assert_eq!(on_disk, listed);
    for f in &m.files {
        let bytes = fs::read(out.join(&f.name)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), f.sha256);
        assert_eq!(bytes.len(), f.bytes);
    }
    for f in m.files.iter().filter(|f| f.name.ends_with(".csv")) {
        let dat = f.name.replace(".csv", ".dat");
        let body = fs::read_to_string(out.join(&f.name)).unwrap();
        assert_eq!(listed.contains(&dat), plot_data(&body).is_some(), "{dat}");
    }
    let text = fs::read_to_string(out.join(MANIFEST)).unwrap();
    assert!(!text.contains(tmp.path().to_str().unwrap()));
}

#[test]
fn plot_data_keeps_numeric_columns() {
    let csv = "name,x,y\na,1,2\na,2,3\nb,1,5\n";
    assert_eq!(plot_data(csv).unwrap(), "# x y\n1 2\n2 3\n\n1 5\n");
    assert!(plot_data("name\na\n").is_none());
}

#[test]
fn scenario_names_round_trip() {
    for s in Scenario::ALL {
        assert_eq!(Scenario::parse(s.name()).unwrap(), s);
    }
    assert_eq!(Scenario::FullSuite.checks(), (1..=14).collect::<Vec<_>>());
    assert!(Scenario::parse("all").is_err());
}
