use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command and get the same bytes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputHash>,
    pub out_dir: String,
    pub outputs: Vec<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a file, or of a directory's regular files in name order (each
/// contributing its name and contents).
pub fn hash_path(path: &Path) -> Result<InputHash> {
    let read_err = |e: std::io::Error| CliError::Parse(format!("{}: {e}", path.display()));
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut names: Vec<_> = fs::read_dir(path)
            .map_err(read_err)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .map(|e| e.file_name())
            .collect();
        names.sort();
        for name in names {
            let bytes = fs::read(path.join(&name)).map_err(read_err)?;
            h.update(name.to_string_lossy().as_bytes());
            h.update([0]);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    } else {
        h.update(fs::read(path).map_err(read_err)?);
    }
    Ok(InputHash {
        path: path.display().to_string(),
        sha256: hex(&h.finalize()),
    })
}

pub fn write_file(out: &Path, name: &str, contents: &str) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, contents).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

impl RunManifest {
    pub fn write(&self, out: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        write_file(out, "manifest.json", &text)
    }
}

pub fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| CliError::config(format!("{}: {e}", out.display())))
}
