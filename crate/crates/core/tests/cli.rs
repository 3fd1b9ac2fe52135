use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn space(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_space"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CONFIG: &str = r#"{"class_index": 1, "n_s": 8, "n_pca": 5, "tcav_repetitions": 3, "n_random_concepts": 3}"#;

#[test]
fn help_and_usage() {
    assert_eq!(code(&space(&["--help"])), 0);
    assert_eq!(code(&space(&[])), 1);
    assert_eq!(code(&space(&["run"])), 1);
}

#[test]
fn synth_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out, cfg) = (dir.path().join("data"), dir.path().join("out"), dir.path().join("cfg.json"));
    let o = space(&["synth", "--recipe", "blobs-small", "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("ground_truth.json").is_file());

    fs::write(&cfg, CONFIG).unwrap();
    let o = space(&["run", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&out), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let results: serde_json::Value = serde_json::from_slice(&fs::read(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(results["seed"], 3);
    assert_eq!(results["method"], "SPACE");

    let o = space(&["report", "--result", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("no alignment labels"));
    fs::write(out.join("alignment.json"), r#"{"aligned": {"0": true}}"#).unwrap();
    let o = space(&["report", "--result", s(&out)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("1 of 1 labeled concepts aligned"));
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&space(&["synth", "--recipe", "blobs-small", "--out", s(&data)])), 0);
    let out = dir.path().join("out");
    let cfg = dir.path().join("cfg.json");
    for bad in [
        r#"{"class_index": 1, "n_s": 8, "bogus": 1}"#,
        r#"{"class_index": 1, "n_s": 8, "n_p": 0}"#,
        r#"{"class_index": 1, "n_s": 8, "n_s": 4}"#,
        r#"{"class_index": 7, "n_s": 8}"#,
        "not json",
    ] {
        fs::write(&cfg, bad).unwrap();
        let o = space(&["run", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&out)]);
        assert_eq!(code(&o), 1, "{bad}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&space(&["run", "--config", s(&missing), "--dataset", s(&data), "--out", s(&out)])), 1);
    fs::write(&cfg, CONFIG).unwrap();
    assert_eq!(code(&space(&["run", "--config", s(&cfg), "--out", s(&out)])), 1);
    assert_eq!(code(&space(&["run", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&out), "--method", "lime"])), 1);
    assert_eq!(code(&space(&["synth", "--recipe", "zebras", "--out", s(&out)])), 1);
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, CONFIG).unwrap();
    let nowhere = dir.path().join("nowhere");
    let out = dir.path().join("out");
    assert_eq!(code(&space(&["run", "--config", s(&cfg), "--dataset", s(&nowhere), "--out", s(&out)])), 2);
    assert_eq!(code(&space(&["report", "--result", s(&nowhere)])), 2);
}
