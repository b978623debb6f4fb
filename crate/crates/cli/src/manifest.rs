//! Run-directory manifest: what produced the directory and a digest of every file in it.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use siglab_core::Result;

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
    files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
        if rel == MANIFEST {
            continue;
        }
        out.push(FileEntry { bytes: e.metadata()?.len(), sha256: sha256_file(&path)?, path: rel });
    }
    Ok(())
}

/// Write `dir/manifest.json` listing every other file below `dir`.
pub fn write_manifest(dir: &Path, command: &str, config: &RunConfig) -> Result<()> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    let manifest = Manifest { tool: "siglab", version: env!("CARGO_PKG_VERSION"), command, config, files };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}
