//! File formats: images, annotations, manifests, model config text files,
//! and the binary weights container. All writers go through a temp file and
//! an atomic rename so failures never leave partial output.

pub mod annot;
pub mod config;
pub mod image;
pub mod viz;
pub mod weights;

use std::path::Path;

use crate::error::{Error, Result};

/// Writes bytes atomically (temp file + rename in the target directory).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp-{}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
            std::process::id()
        )),
        None => std::path::PathBuf::from(format!(".atomic.tmp-{}", std::process::id())),
    };
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })?;
    Ok(())
}
