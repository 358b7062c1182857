use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const BUILD_ID: &str = match option_env!("GTGIB_BUILD_ID") {
    Some(id) => id,
    None => concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION")),
};

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Writes `path` through `f`, flushing at the end.
pub fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> gtgib_core::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Records what is needed to reproduce a run: configuration hash, seed,
/// build and the hashes of every emitted file.
pub fn write_manifest(dir: &Path, command: &str, config_hash: &str, seed: u64, threads: usize, files: &[&str]) -> Result<()> {
    let mut hashes = serde_json::Map::new();
    for f in files {
        hashes.insert((*f).to_string(), Value::String(sha256_file(&dir.join(f))?));
    }
    let manifest = json!({
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "threads": threads,
        "build": BUILD_ID,
        "files": hashes,
    });
    write_text(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
}
