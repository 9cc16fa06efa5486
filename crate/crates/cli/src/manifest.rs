//! Run manifests: a JSON sidecar per command invocation recording the
//! argv, the fully resolved flags, input hashes, and output paths, so
//! `utos rerun --manifest <file>` can replay the command and reproduce
//! its outputs byte for byte. Manifests carry no timestamps — a faithful
//! replay rewrites an identical manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything needed to replay one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Always "utos"; guards against feeding a foreign JSON file to rerun.
    pub tool: String,
    pub version: String,
    /// Subcommand name, e.g. "grid".
    pub command: String,
    /// Original command line, without the leading program name.
    pub argv: Vec<String>,
    /// Fully resolved flag values (defaults filled in).
    pub resolved: serde_json::Value,
    /// The --jobs value in effect. Informational: outputs never depend on
    /// worker-thread scheduling.
    pub jobs: usize,
    /// SHA-256 of every input file, keyed by path as given.
    pub inputs: BTreeMap<String, String>,
    /// Output paths this command produced.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        argv: &[String],
        resolved: serde_json::Value,
        jobs: usize,
    ) -> RunManifest {
        RunManifest {
            tool: "utos".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: argv.to_vec(),
            resolved,
            jobs,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Record an input file along with its content hash.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Write the manifest next to `primary_output` as
    /// `<filename>.manifest.json` and return the path written.
    pub fn write_for(&self, primary_output: &Path) -> Result<PathBuf> {
        let path = manifest_path(primary_output);
        self.write_to(&path)?;
        Ok(path)
    }

    /// Write the manifest to an explicit path.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).context("serializing run manifest")?;
        std::fs::write(path, json + "\n")
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(())
    }
}

/// Sidecar manifest path for an output file: `<filename>.manifest.json`
/// in the same directory.
pub fn manifest_path(primary_output: &Path) -> PathBuf {
    let name = primary_output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    primary_output.with_file_name(format!("{name}.manifest.json"))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing manifest {}", path.display()))?;
    ensure!(
        manifest.tool == "utos",
        "{} is not a utos run manifest (tool = {:?})",
        path.display(),
        manifest.tool
    );
    Ok(manifest)
}

/// Hex-encoded SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file =
        File::open(path).with_context(|| format!("hashing input {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}
