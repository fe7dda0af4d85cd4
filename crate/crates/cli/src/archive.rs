//! Unpacking uploaded session archives (tar, optionally gzip-compressed).

use std::io::Read;
use std::path::{Path, PathBuf};

use sidelight_core::session::MANIFEST_FILE;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive could not be read: {0}")]
    Unreadable(String),
    #[error("archive holds no {MANIFEST_FILE}")]
    NoManifest,
}

/// Extracts `bytes` under `dest` and returns the directory holding the
/// manifest: `dest` itself or its single top-level folder.
pub fn unpack_session(bytes: &[u8], dest: &Path) -> Result<PathBuf, ArchiveError> {
    std::fs::create_dir_all(dest).map_err(|e| ArchiveError::Unreadable(e.to_string()))?;
    let reader: Box<dyn Read + '_> = if bytes.starts_with(&[0x1f, 0x8b]) {
        Box::new(flate2::read::GzDecoder::new(bytes))
    } else {
        Box::new(bytes)
    };
    let mut archive = tar::Archive::new(reader);
    let entries = archive.entries().map_err(|e| ArchiveError::Unreadable(e.to_string()))?;
    for entry in entries {
        let mut entry = entry.map_err(|e| ArchiveError::Unreadable(e.to_string()))?;
        // unpack_in refuses paths that escape `dest`
        entry.unpack_in(dest).map_err(|e| ArchiveError::Unreadable(e.to_string()))?;
    }
    if dest.join(MANIFEST_FILE).is_file() {
        return Ok(dest.to_path_buf());
    }
    let dirs: Vec<PathBuf> = std::fs::read_dir(dest)
        .map_err(|e| ArchiveError::Unreadable(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    match dirs.as_slice() {
        [only] if only.join(MANIFEST_FILE).is_file() => Ok(only.clone()),
        _ => Err(ArchiveError::NoManifest),
    }
}

/// Packs a session directory into a gzip-compressed tar under `name/`.
pub fn pack_session(dir: &Path, name: &str) -> std::io::Result<Vec<u8>> {
    let enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
    let mut builder = tar::Builder::new(enc);
    builder.append_dir_all(name, dir)?;
    builder.into_inner()?.finish()
}
