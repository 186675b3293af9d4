use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RunConfig, Verdict};
use crate::error::{Error, Result};
use crate::scattering_data::fmt_f64;

pub const ARTIFACT_VERSION: &str = "1";

/// A numeric table written as CSV: header row, comma separated, 17
/// significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::DataFile("empty CSV".into()))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let row: Vec<f64> = l
                    .split(',')
                    .map(|c| c.parse::<f64>().map_err(|e| Error::DataFile(format!("bad cell {c:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if row.len() != header.len() {
                    return Err(Error::DataFile(format!("row has {} cells, header has {}", row.len(), header.len())));
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(Self { header, rows })
    }
}

/// Named tables grouped by run-directory subfolder.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub slices: Vec<(String, Table)>,
    pub rays: Vec<(String, Table)>,
    pub tables: Vec<(String, Table)>,
}

impl RunArtifacts {
    pub fn is_empty(&self) -> bool {
        self.slices.is_empty() && self.rays.is_empty() && self.tables.is_empty()
    }

    fn files(&self) -> impl Iterator<Item = (String, &Table)> {
        self.slices
            .iter()
            .map(|(n, t)| (format!("slices/{n}.csv"), t))
            .chain(self.rays.iter().map(|(n, t)| (format!("rays/{n}.csv"), t)))
            .chain(self.tables.iter().map(|(n, t)| (format!("tables/{n}.csv"), t)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub experiment: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub wall_clock_seconds: f64,
    pub notes: Vec<String>,
    pub verdicts: Vec<Verdict>,
    /// Every file of the run directory except manifest.json itself.
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn staging_dir(dir: &Path) -> Result<PathBuf> {
    let name = dir
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("run directory {} has no final component", dir.display())))?;
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    Ok(parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id())))
}

fn write_all(stage: &Path, artifacts: &RunArtifacts, manifest: &mut RunManifest) -> Result<()> {
    fs::create_dir_all(stage)?;
    let mut files = Vec::new();
    for (path, table) in artifacts.files() {
        let full = stage.join(&path);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent)?;
        }
        let text = table.to_csv();
        fs::write(&full, &text)?;
        files.push(FileEntry {
            path,
            sha256: sha256_hex(text.as_bytes()),
            bytes: text.len() as u64,
        });
    }
    if !manifest.verdicts.is_empty() {
        let text = serde_json::to_string_pretty(&manifest.verdicts)? + "\n";
        fs::write(stage.join("verdicts.json"), &text)?;
        files.push(FileEntry {
            path: "verdicts.json".into(),
            sha256: sha256_hex(text.as_bytes()),
            bytes: text.len() as u64,
        });
    }
    manifest.files = files;
    fs::write(stage.join("manifest.json"), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

/// Write `<dir>/manifest.json`, `<dir>/verdicts.json`, `<dir>/slices/*.csv`,
/// `<dir>/rays/*.csv` and `<dir>/tables/*.csv` atomically: everything is
/// staged in a sibling directory that replaces `dir` only once complete, and
/// the staging directory is removed on failure.
pub fn write_run(dir: &Path, artifacts: &RunArtifacts, manifest: &RunManifest) -> Result<RunManifest> {
    let stage = staging_dir(dir)?;
    if stage.exists() {
        fs::remove_dir_all(&stage)?;
    }
    let mut manifest = manifest.clone();
    let result = write_all(&stage, artifacts, &mut manifest).and_then(|_| {
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&stage, dir)?;
        Ok(())
    });
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&stage);
        return Err(e);
    }
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli_io::{Bound, ExperimentKind};

    fn manifest(verdicts: Vec<Verdict>) -> RunManifest {
        let config = RunConfig::baseline(ExperimentKind::JacobianCheck);
        RunManifest {
            artifact_version: ARTIFACT_VERSION.into(),
            experiment: "jacobian-check".into(),
            config_hash: config.hash(),
            config,
            wall_clock_seconds: 0.0,
            notes: Vec::new(),
            verdicts,
            files: Vec::new(),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut t = Table::new(&["x", "y"]);
        t.push(vec![0.1, -1.0 / 3.0]);
        t.push(vec![1e-300, std::f64::consts::PI]);
        let text = t.to_csv();
        assert!(text.starts_with("x,y\n"));
        assert_eq!(Table::from_csv(&text).unwrap(), t);
    }

    #[test]
    fn empty_run_writes_manifest_only() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("empty");
        let m = write_run(&dir, &RunArtifacts::default(), &manifest(Vec::new())).unwrap();
        let names: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("manifest.json")]);
        assert!(m.files.is_empty());
        assert_eq!(read_manifest(&dir).unwrap(), m);
    }

    #[test]
    fn inventory_matches_the_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let mut a = RunArtifacts::default();
        let mut t = Table::new(&["r", "v"]);
        t.push(vec![0.0, 1.0]);
        a.slices.push(("t2".into(), t.clone()));
        a.rays.push(("s0".into(), t));
        let v = Verdict::new("c", Bound::Upper, 0.0, 0.0, 1.0, 1.0);
        let m = write_run(&dir, &a, &manifest(vec![v])).unwrap();
        let paths: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(paths, ["slices/t2.csv", "rays/s0.csv", "verdicts.json"]);
        for f in &m.files {
            let bytes = fs::read(dir.join(&f.path)).unwrap();
            assert_eq!(sha256_hex(&bytes), f.sha256);
        }
        let leftovers = fs::read_dir(tmp.path()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn failed_write_leaves_nothing_behind() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let mut a = RunArtifacts::default();
        a.tables.push(("../../escape/x".into(), Table::new(&["a"])));
        fs::write(tmp.path().join("escape"), "not a directory").unwrap();
        assert!(write_run(&dir, &a, &manifest(Vec::new())).is_err());
        assert!(!dir.exists());
        let names: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("escape")]);
    }
}
