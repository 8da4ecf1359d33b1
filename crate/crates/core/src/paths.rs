//! Workspace-relative path validation and artifact digests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Component, Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("path escapes the workspace root: {0}")]
    Escape(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Validates that `rel` is a plain relative path (no `..`, no root) and
/// returns it joined under `root`.
pub fn resolve_under(root: &Path, rel: &Path) -> Result<PathBuf, PathError> {
    if rel.as_os_str().is_empty() {
        return Err(PathError::Escape(String::from("<empty>")));
    }
    for component in rel.components() {
        match component {
            Component::Normal(_) | Component::CurDir => {}
            _ => return Err(PathError::Escape(rel.display().to_string())),
        }
    }
    Ok(root.join(rel))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

pub fn file_digest(path: &Path) -> Result<String, PathError> {
    let bytes = fs::read(path).map_err(|source| PathError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

/// Digest over a directory tree: sorted relative paths hashed together with
/// their contents. Stable across platforms (paths use `/`).
pub fn tree_digest(root: &Path) -> Result<String, PathError> {
    let mut files: Vec<PathBuf> = Vec::new();
    if root.exists() {
        for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| PathError::Io {
                path: root.display().to_string(),
                source: e.into(),
            })?;
            if entry.file_type().is_file() {
                files.push(entry.path().to_path_buf());
            }
        }
    }
    files.sort();
    let mut hasher = Sha256::new();
    for file in &files {
        let rel = file
            .strip_prefix(root)
            .unwrap_or(file)
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        let bytes = fs::read(file).map_err(|source| PathError::Io {
            path: file.display().to_string(),
            source,
        })?;
        hasher.update(rel.as_bytes());
        hasher.update([0u8]);
        hasher.update(&bytes);
        hasher.update([0xffu8]);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    Ok(out)
}

/// Normalizes CRLF and lone CR line endings to LF.
pub fn normalize_line_endings(text: &str) -> String {
    if !text.contains('\r') {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\r' {
            if chars.peek() == Some(&'\n') {
                chars.next();
            }
            out.push('\n');
        } else {
            out.push(c);
        }
    }
    out
}
