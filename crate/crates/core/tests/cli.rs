use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_kinlang");

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn kinlang(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn entries(dir: &Path) -> Vec<PathBuf> {
    match fs::read_dir(dir) {
        Ok(rd) => rd.map(|e| e.unwrap().path()).collect(),
        Err(_) => Vec::new(),
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn constants_for_the_double_well() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c.json");
    let o = kinlang(&["constants", "-c", config("dw.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out);
    let tau = doc["constants"]["tau"].as_f64().unwrap();
    assert!((tau - 0.0019).abs() < 1e-12);
    assert_eq!(doc["diagnostics"].as_array().unwrap().len(), 0);
}

#[test]
fn contraction_run_writes_a_record() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kinlang(&["contract", "-c", config("quad.json").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dirs = entries(tmp.path());
    assert_eq!(dirs.len(), 1);
    let name = dirs[0].file_name().unwrap().to_str().unwrap().to_string();
    assert!(name.starts_with("contract-") && name.len() == "contract-".len() + 16, "{name}");
    for f in ["config.json", "record.json", "constants.json", "series.csv"] {
        assert!(dirs[0].join(f).is_file(), "missing {f}");
    }
    let rec = json(&dirs[0].join("record.json"));
    assert!(rec["rate_fit"]["rate"].as_f64().unwrap() >= 0.25);
}

#[test]
fn missing_config_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let o = kinlang(&["contract", "-c", tmp.path().join("absent.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn malformed_config_names_the_offending_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"model": {"dimension": 1, "gamma": "fast", "u": 1.0, "external": {"kind": "double_well", "beta": 1.0}}, "integrator": {"horizon": 1.0}, "experiment": "contract_classical", "replicas": 4, "initial": {"kind": "gaussian", "mean": {"x": [0.0], "y": [0.0]}, "std": 1.0}}"#).unwrap();
    let out = tmp.path().join("runs");
    let o = kinlang(&["contract", "-c", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("/model/gamma"), "{err}");
    assert!(!out.exists());
}

#[test]
fn small_friction_exits_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("m.json");
    fs::write(&model, r#"{"dimension": 1, "gamma": 1.0, "u": 1.0, "external": {"kind": "double_well", "beta": 1.0}}"#).unwrap();
    let out = tmp.path().join("c.json");
    let o = kinlang(&["constants", "-c", model.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&out)["diagnostics"][0]["kind"], "friction_too_small");
}

#[test]
fn reruns_are_bitwise_identical_and_seed_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("quad.json");
    let run = |sub: &str, seed: &str| {
        let out = tmp.path().join(sub);
        let o = kinlang(&["contract", "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed, "--step", "0.01"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        entries(&out).remove(0)
    };
    let (a, b, c) = (run("a", "1"), run("b", "1"), run("c", "2"));
    assert_eq!(fs::read(a.join("record.json")).unwrap(), fs::read(b.join("record.json")).unwrap());
    assert_eq!(a.file_name(), b.file_name());
    assert_ne!(a.file_name(), c.file_name());
}
