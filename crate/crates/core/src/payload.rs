//! Shared image payload storage.
//!
//! Stores are keyed by URI. A directory-backed store plays the role of the
//! cluster's shared network file system; the in-memory store backs
//! simulations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use crate::error::{Error, Result};

pub trait PayloadStore: Send + Sync {
    fn put(&mut self, uri: &str, bytes: &[u8]) -> Result<()>;

    /// Removes a payload. Removing a missing payload is not an error.
    fn delete(&mut self, uri: &str) -> Result<()>;

    fn contains(&self, uri: &str) -> bool;

    /// Every stored URI, ascending.
    fn uris(&self) -> Result<Vec<String>>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryPayloadStore {
    blobs: BTreeMap<String, Vec<u8>>,
}

impl MemoryPayloadStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, uri: &str) -> Option<&[u8]> {
        self.blobs.get(uri).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }
}

impl PayloadStore for MemoryPayloadStore {
    fn put(&mut self, uri: &str, bytes: &[u8]) -> Result<()> {
        self.blobs.insert(uri.to_owned(), bytes.to_vec());
        Ok(())
    }

    fn delete(&mut self, uri: &str) -> Result<()> {
        self.blobs.remove(uri);
        Ok(())
    }

    fn contains(&self, uri: &str) -> bool {
        self.blobs.contains_key(uri)
    }

    fn uris(&self) -> Result<Vec<String>> {
        Ok(self.blobs.keys().cloned().collect())
    }
}

/// Payloads as files under a root directory; URIs are relative paths.
#[derive(Debug, Clone)]
pub struct DirPayloadStore {
    root: PathBuf,
}

impl DirPayloadStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(DirPayloadStore { root })
    }

    fn path(&self, uri: &str) -> Result<PathBuf> {
        let rel = Path::new(uri);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(Error::InvalidParameter(format!(
                "payload uri must be a relative path without '..': {uri}"
            )));
        }
        Ok(self.root.join(rel))
    }
}

impl PayloadStore for DirPayloadStore {
    fn put(&mut self, uri: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(uri)?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    fn delete(&mut self, uri: &str) -> Result<()> {
        match fs::remove_file(self.path(uri)?) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    fn contains(&self, uri: &str) -> bool {
        self.path(uri).map(|p| p.is_file()).unwrap_or(false)
    }

    fn uris(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            for item in fs::read_dir(&dir)? {
                let path = item?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if let Ok(rel) = path.strip_prefix(&self.root) {
                    out.push(rel.to_string_lossy().replace('\\', "/"));
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_store_round_trip() {
        let mut s = MemoryPayloadStore::new();
        s.put("a/b.img", b"x").unwrap();
        assert!(s.contains("a/b.img"));
        assert_eq!(s.get("a/b.img"), Some(&b"x"[..]));
        s.delete("a/b.img").unwrap();
        s.delete("a/b.img").unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn dir_store_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let mut s = DirPayloadStore::open(tmp.path()).unwrap();
        s.put("generated/1.img", b"one").unwrap();
        s.put("corpus/2.img", b"two").unwrap();
        assert_eq!(s.uris().unwrap(), vec!["corpus/2.img", "generated/1.img"]);
        s.delete("generated/1.img").unwrap();
        assert!(!s.contains("generated/1.img"));
        s.delete("generated/1.img").unwrap();
        assert!(s.put("../escape", b"").is_err());
    }
}
