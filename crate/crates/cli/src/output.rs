//! Artifact writing: overwrite protection, atomic replace, and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{Failure, Invocation};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: &'static str,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn text(name: &'static str, text: String) -> Self {
        Artifact {
            name,
            bytes: text.into_bytes(),
        }
    }

    pub fn json(name: &'static str, value: &impl Serialize) -> Self {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        Artifact::text(name, text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHash {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub invocation: Invocation,
    pub exit_code: u8,
    pub artifacts: Vec<ArtifactHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Writes every artifact and then the manifest into `dir`.
pub fn write_run(
    dir: &Path,
    force: bool,
    invocation: &Invocation,
    exit_code: u8,
    artifacts: &[Artifact],
) -> Result<PathBuf, Failure> {
    let targets: Vec<PathBuf> = artifacts
        .iter()
        .map(|a| dir.join(a.name))
        .chain([dir.join(MANIFEST)])
        .collect();
    if !force {
        if let Some(p) = targets.iter().find(|p| p.exists()) {
            return Err(Failure::usage(format!("{} exists; pass --force to overwrite", p.display())));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))?;
    let mut hashes = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let path = dir.join(a.name);
        atomic_write(&path, &a.bytes).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
        hashes.push(ArtifactHash {
            file: a.name.to_string(),
            sha256: sha256_hex(&a.bytes),
            bytes: a.bytes.len(),
        });
    }
    let manifest = Manifest {
        tool: "ma-lin".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        invocation: invocation.clone(),
        exit_code,
        artifacts: hashes,
    };
    let path = dir.join(MANIFEST);
    let bytes = Artifact::json(MANIFEST, &manifest).bytes;
    atomic_write(&path, &bytes).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Manifest, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}
