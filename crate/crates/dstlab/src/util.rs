use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

/// `base` itself if free, otherwise the first free `base-1`, `base-2`, ...
/// With `overwrite` an existing `base` is cleared and reused.
pub fn fresh_dir(base: &Path, overwrite: bool) -> Result<PathBuf> {
    if overwrite && base.exists() {
        std::fs::remove_dir_all(base).with_context(|| format!("clearing {}", base.display()))?;
    }
    let mut dir = base.to_path_buf();
    let mut k = 1;
    while dir.exists() {
        let name = format!("{}-{k}", base.file_name().and_then(|n| n.to_str()).unwrap_or("run"));
        dir = base.with_file_name(name);
        k += 1;
    }
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}
