use std::fs;
use std::process::Command;

fn mmkg() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mmkg"));
    c.env_remove("MMKG_OUTPUT_ROOT");
    c
}

#[test]
fn malformed_config_exits_with_a_schema_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let base = mmkg().args(["forward", "--print-config"]).output().unwrap();
    assert!(base.status.success());
    let text = String::from_utf8(base.stdout).unwrap().replace("\"dr\": 0.1", "\"dr\": -0.1");
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, text).unwrap();
    let root = tmp.path().join("runs");
    let out = mmkg()
        .arg("forward")
        .arg("--config")
        .arg(&cfg)
        .env("MMKG_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
    assert!(!root.exists());
}

#[test]
fn environment_sets_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mmkg()
        .args(["jacobian-check", "--jobs", "2"])
        .env("MMKG_OUTPUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 2);
    let runs: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1);
    assert!(runs[0].file_name().unwrap().to_string_lossy().starts_with("jacobian-check-"));
    assert!(runs[0].join("manifest.json").exists());
    assert!(runs[0].join("verdicts.json").exists());
}

#[test]
fn out_flag_and_config_file_are_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let printed = mmkg().args(["jacobian-check", "--print-config", "--tolerance-scale", "3"]).output().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, &printed.stdout).unwrap();
    let dir = tmp.path().join("here");
    let out = mmkg()
        .arg("jacobian-check")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .arg("--sequential")
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["tolerances"]["scale"], 3.0);
    assert_eq!(manifest["experiment"], "jacobian-check");
}

#[test]
fn tolerance_scale_below_one_is_rejected() {
    let out = mmkg().args(["jacobian-check", "--tolerance-scale", "0.5", "--print-config"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_for_another_experiment_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let printed = mmkg().args(["charge-check", "--print-config"]).output().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, &printed.stdout).unwrap();
    let out = mmkg().arg("jacobian-check").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join("x")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("x").exists());
}
