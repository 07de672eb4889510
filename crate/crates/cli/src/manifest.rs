//! Run manifests: what a command was asked to do, with which inputs, and how long it took.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const MANIFEST_NAME: &str = "run_manifest.json";
pub const MANIFEST_FORMAT: u32 = 1;

/// Content digest of one input file or directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputVersion {
    /// What the input is to the command (`index`, `hr_dir`, `checkpoint`, ...).
    pub role: String,
    pub path: PathBuf,
    /// SHA-256 of the file, or of the sorted `(relative path, file digest)` list of a directory.
    pub sha256: String,
    pub files: usize,
}

impl InputVersion {
    pub fn of(role: &str, path: &Path) -> Result<Self> {
        let (sha256, files) = if path.is_dir() {
            digest_dir(path)?
        } else {
            (digest_file(path)?, 1)
        };
        Ok(Self {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256,
            files,
        })
    }
}

fn digest_file(path: &Path) -> Result<String> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn digest_dir(dir: &Path) -> Result<(String, usize)> {
    let mut files = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true).sort_by_file_name() {
        let entry = entry?;
        if entry.file_type().is_file() && entry.file_name() != MANIFEST_NAME {
            files.push(entry.into_path());
        }
    }
    let mut hasher = Sha256::new();
    for f in &files {
        let rel = f.strip_prefix(dir).unwrap_or(f);
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update(digest_file(f)?.as_bytes());
        hasher.update([b'\n']);
    }
    Ok((hex::encode(hasher.finalize()), files.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    /// Subcommand name.
    pub command: String,
    /// Full argument vector, program name excluded.
    pub argv: Vec<String>,
    /// Resolved settings after defaults, config file and flags were merged.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputVersion>,
    pub outputs: Vec<PathBuf>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub wall_clock_secs: Option<f64>,
    pub status: RunStatus,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn input(&self, role: &str) -> Option<&InputVersion> {
        self.inputs.iter().find(|i| i.role == role)
    }
}

/// Where the manifest of an output goes.
///
/// A directory output holds `run_manifest.json`; a file output gets a
/// `<file>.manifest.json` sidecar.
pub fn manifest_path(output: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        output.join(MANIFEST_NAME)
    } else {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

/// A manifest on disk that is rewritten when the run ends.
pub struct ManifestWriter {
    path: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl ManifestWriter {
    /// Writes the manifest in the `running` state.
    pub fn start(path: PathBuf, manifest: RunManifest) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let w = Self {
            path,
            manifest,
            clock: Instant::now(),
        };
        w.write()?;
        tracing::info!(path = %w.path.display(), "run manifest written");
        Ok(w)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn write(&self) -> Result<()> {
        let tmp = self.path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        std::fs::rename(&tmp, &self.path).with_context(|| format!("writing {}", self.path.display()))?;
        Ok(())
    }

    pub fn finish(mut self, outcome: &Result<()>) -> Result<()> {
        self.manifest.finished_at = Some(Utc::now());
        self.manifest.wall_clock_secs = Some(self.clock.elapsed().as_secs_f64());
        match outcome {
            Ok(()) => self.manifest.status = RunStatus::Ok,
            Err(e) => {
                self.manifest.status = RunStatus::Failed;
                self.manifest.error = Some(format!("{e:#}"));
            }
        }
        self.write()
    }
}

/// Writes `manifest` to `path`, runs `work`, then records the outcome and wall-clock time.
pub fn run_recorded(path: PathBuf, manifest: RunManifest, work: impl FnOnce() -> Result<()>) -> Result<()> {
    let writer = ManifestWriter::start(path, manifest)?;
    let outcome = work();
    writer.finish(&outcome)?;
    outcome
}

/// Builds a manifest in the `running` state.
pub fn new_manifest(
    command: &str,
    argv: &[String],
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<InputVersion>,
    outputs: Vec<PathBuf>,
) -> RunManifest {
    RunManifest {
        format_version: MANIFEST_FORMAT,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        argv: argv.to_vec(),
        config,
        seed,
        inputs,
        outputs,
        started_at: Utc::now(),
        finished_at: None,
        wall_clock_secs: None,
        status: RunStatus::Running,
        error: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_digest_ignores_the_manifest_and_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "a").unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), "b").unwrap();
        let before = InputVersion::of("x", dir.path()).unwrap();
        assert_eq!(before.files, 2);
        std::fs::write(dir.path().join(MANIFEST_NAME), "{}").unwrap();
        assert_eq!(InputVersion::of("x", dir.path()).unwrap(), before);
        std::fs::write(dir.path().join("sub/b.txt"), "c").unwrap();
        assert_ne!(InputVersion::of("x", dir.path()).unwrap().sha256, before.sha256);
    }

    #[test]
    fn file_digest_is_sha256() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("abc");
        std::fs::write(&f, "abc").unwrap();
        assert_eq!(
            InputVersion::of("x", &f).unwrap().sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(manifest_path(Path::new("out/report.json"), false), PathBuf::from("out/report.json.manifest.json"));
        assert_eq!(manifest_path(Path::new("runs/a"), true), PathBuf::from("runs/a/run_manifest.json"));
    }
}
