use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mmkg::cli_io::{execute, read_manifest, ExperimentKind, RunConfig};
use mmkg::{Error, Exec};

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn quick(kind: ExperimentKind) -> RunConfig {
    let mut cfg = RunConfig::baseline(kind);
    cfg.quadrature.jacobian_samples = 4;
    cfg.quadrature.huygens_times = vec![10.0, 20.0];
    cfg
}

#[test]
fn identical_configs_give_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    for kind in [ExperimentKind::JacobianCheck, ExperimentKind::HuygensCheck] {
        let cfg = quick(kind);
        let a = tmp.path().join(format!("{}-a", kind.name()));
        let b = tmp.path().join(format!("{}-b", kind.name()));
        execute(&cfg, &a, Exec::Parallel).unwrap();
        execute(&cfg, &b, Exec::Sequential).unwrap();
        let (fa, fb) = (files(&a), files(&b));
        assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
        for (name, bytes) in &fa {
            if name != "manifest.json" {
                assert_eq!(bytes, &fb[name], "{name} differs");
            }
        }
        let (ma, mb) = (read_manifest(&a).unwrap(), read_manifest(&b).unwrap());
        assert_eq!(ma.config_hash, mb.config_hash);
        assert_eq!(ma.verdicts, mb.verdicts);
        assert_eq!(ma.files, mb.files);
    }
}

#[test]
fn negative_step_is_rejected_before_anything_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::baseline(ExperimentKind::Forward);
    cfg.grid.dr = -0.1;
    let dir = tmp.path().join("run");
    assert!(matches!(execute(&cfg, &dir, Exec::default()), Err(Error::Schema(_))));
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);

    let text = RunConfig::baseline(ExperimentKind::Forward).to_json().replace("\"dr\": 0.1", "\"dr\": -0.1");
    assert!(matches!(RunConfig::from_json(&text), Err(Error::Schema(_))));
}

#[test]
fn manifest_lists_every_file_and_every_check_once() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = quick(ExperimentKind::ChargeCheck);
    let m = execute(&cfg, &dir, Exec::default()).unwrap();
    assert_eq!(m.config_hash, cfg.hash());
    assert_eq!(m.config, cfg);
    assert!(m.wall_clock_seconds >= 0.0);
    let mut names: Vec<&str> = m.verdicts.iter().map(|v| v.name.as_str()).collect();
    let n = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), n);
    let on_disk: Vec<String> = files(&dir).into_keys().filter(|k| k != "manifest.json").collect();
    let mut listed: Vec<String> = m.files.iter().map(|f| f.path.clone()).collect();
    listed.sort();
    assert_eq!(on_disk, listed);
    let verdicts: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("verdicts.json")).unwrap()).unwrap();
    assert_eq!(verdicts.as_array().unwrap().len(), n);
    assert!(m.all_pass());
}

#[test]
fn rerun_replaces_the_previous_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    fs::create_dir_all(dir.join("stale")).unwrap();
    execute(&quick(ExperimentKind::JacobianCheck), &dir, Exec::default()).unwrap();
    assert!(!dir.join("stale").exists());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
}
