//! Run manifests. Every subcommand writes one before its side effects, so
//! an interrupted run still records the command, resolved configuration,
//! seeds, input digests, and the artifact paths it was going to produce.
//! On completion the manifest is rewritten with output digests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::{data, Failure};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub created_utc: String,
    pub seed: u64,
    /// Sections of resolved key=value configuration, defaults included.
    pub config: BTreeMap<String, BTreeMap<String, String>>,
    pub inputs: Vec<FileDigest>,
    /// Paths this run intends to produce.
    pub artifacts: Vec<String>,
    pub status: String,
    /// Digests of the artifacts that were actually produced.
    pub outputs: Vec<FileDigest>,
    pub finished_utc: Option<String>,
    #[serde(skip)]
    path: PathBuf,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, path: PathBuf) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            created_utc: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
            seed,
            config: BTreeMap::new(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            status: "started".to_string(),
            outputs: Vec::new(),
            finished_utc: None,
            path,
        }
    }

    pub fn set_config(&mut self, section: &str, kv: BTreeMap<String, String>) {
        self.config.insert(section.to_string(), kv);
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), Failure> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn add_artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    /// The write-before-work step.
    pub fn start(&self) -> Result<(), Failure> {
        self.write()
    }

    /// Rewrites the manifest naming (and digesting) the finished outputs.
    pub fn finish(&mut self, outputs: &[PathBuf]) -> Result<(), Failure> {
        self.status = "completed".to_string();
        self.finished_utc = Some(Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true));
        self.outputs = outputs.iter().map(|p| digest_file(p)).collect::<Result<_, _>>()?;
        self.write()
    }

    fn write(&self) -> Result<(), Failure> {
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(data)?;
            }
        }
        let mut body = serde_json::to_string_pretty(self).map_err(data)?;
        body.push('\n');
        fs::write(&self.path, body)
            .map_err(|e| data(format!("writing manifest {}: {e}", self.path.display())))
    }
}

/// `<path>.manifest.json`, next to the artifact it describes.
pub fn sibling_manifest_path(artifact: &Path) -> PathBuf {
    PathBuf::from(format!("{}.manifest.json", artifact.display()))
}

pub fn digest_file(path: &Path) -> Result<FileDigest, Failure> {
    let mut file = fs::File::open(path)
        .map_err(|e| data(format!("digesting {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(data)?;
        if n == 0 {
            break;
        }
        bytes += n as u64;
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(FileDigest { path: path.display().to_string(), sha256, bytes })
}
