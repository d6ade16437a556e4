use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use afpnkit_core::weights::write_atomic;

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Pretty JSON to `out`, or to stdout when `out` is `None`.
pub fn emit<T: Serialize + ?Sized>(value: &T, out: Option<&Path>) -> Result<()> {
    let bytes = to_json(value)?;
    match out {
        Some(path) => write_file(path, &bytes),
        None => {
            std::io::stdout().lock().write_all(&bytes)?;
            Ok(())
        }
    }
}
