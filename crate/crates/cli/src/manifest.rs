//! Run manifests and the hash-named run directory holding every output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// An input file, or built-in default content when `path` is `None`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Input {
    pub role: String,
    pub path: Option<String>,
    pub sha256: String,
}

/// Reads an input (or falls back to built-in text) and records its hash.
pub struct Loaded {
    pub input: Input,
    pub bytes: Vec<u8>,
}

impl Loaded {
    pub fn text(&self) -> Result<&str> {
        std::str::from_utf8(&self.bytes).map_err(|e| {
            CliError::Data(format!(
                "{}: not UTF-8 ({e})",
                self.input.path.as_deref().unwrap_or(&self.input.role)
            ))
        })
    }
}

pub fn load(role: &str, path: Option<&Path>, builtin: Option<&str>) -> Result<Loaded> {
    let (bytes, path) = match (path, builtin) {
        (Some(p), _) => (
            fs::read(p).map_err(|e| CliError::io(p.display(), e))?,
            Some(p.display().to_string()),
        ),
        (None, Some(text)) => (text.as_bytes().to_vec(), None),
        (None, None) => return Err(CliError::Usage(format!("missing {role} file"))),
    };
    let input = Input {
        role: role.into(),
        path,
        sha256: sha256_hex(&bytes),
    };
    Ok(Loaded { input, bytes })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Output {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub hash: String,
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub parameters: BTreeMap<String, String>,
    pub inputs: Vec<Input>,
    pub started: String,
    pub finished: Option<String>,
    pub outputs: Vec<Output>,
}

#[derive(Serialize)]
struct Hashed<'a> {
    command: &'a str,
    tool_version: &'a str,
    seed: u64,
    parameters: &'a BTreeMap<String, String>,
    // content and role only: the same inputs at another path give the same run
    inputs: Vec<(&'a str, &'a str)>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        seed: u64,
        parameters: BTreeMap<String, String>,
        inputs: Vec<Input>,
    ) -> Self {
        let hashed = Hashed {
            command,
            tool_version: TOOL_VERSION,
            seed,
            parameters: &parameters,
            inputs: inputs
                .iter()
                .map(|i| (i.role.as_str(), i.sha256.as_str()))
                .collect(),
        };
        let hash = sha256_hex(&serde_json::to_vec(&hashed).expect("manifest serializes"));
        RunManifest {
            hash,
            command: command.into(),
            tool_version: TOOL_VERSION.into(),
            seed,
            parameters,
            inputs,
            started: chrono::Utc::now().to_rfc3339(),
            finished: None,
            outputs: Vec::new(),
        }
    }

    pub fn short_hash(&self) -> &str {
        &self.hash[..16]
    }
}

/// Directory `<root>/<manifest hash>` collecting the outputs of one run.
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    pub fn create(root: &Path, manifest: RunManifest) -> Result<Self> {
        // created on first write, so a failed run leaves nothing behind
        Ok(RunDir {
            path: root.join(manifest.short_hash()),
            manifest,
        })
    }

    pub fn hash(&self) -> &str {
        &self.manifest.hash
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let target = self.path.join(name);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent.display(), e))?;
        }
        fs::write(&target, bytes).map_err(|e| CliError::io(target.display(), e))?;
        self.manifest.outputs.retain(|o| o.name != name);
        self.manifest.outputs.push(Output {
            name: name.into(),
            sha256: sha256_hex(bytes),
        });
        Ok(target)
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.finished = Some(chrono::Utc::now().to_rfc3339());
        let json = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        fs::create_dir_all(&self.path).map_err(|e| CliError::io(self.path.display(), e))?;
        let target = self.path.join("manifest.json");
        fs::write(&target, json).map_err(|e| CliError::io(target.display(), e))?;
        Ok(self.path)
    }
}
