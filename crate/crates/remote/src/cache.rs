//! Content-addressed response cache on disk.
//!
//! Entries are immutable: the first writer of a key wins and later writers
//! leave the stored bytes untouched, so concurrent runs never tear a file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use crate::{RemoteError, Result};

#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Hex SHA-256 over the parts, each terminated by a NUL byte.
pub fn cache_key(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    format!("{:x}", h.finalize())
}

impl DiskCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| RemoteError::io(&root, e))?;
        Ok(DiskCache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, namespace: &str, key: &str) -> PathBuf {
        self.root.join(namespace).join(&key[..2]).join(key)
    }

    pub fn get(&self, namespace: &str, key: &str) -> Result<Option<Vec<u8>>> {
        let path = self.path(namespace, key);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(RemoteError::io(&path, e)),
        }
    }

    /// Stores `bytes` unless the key already exists. Returns whether this
    /// call created the entry.
    pub fn put(&self, namespace: &str, key: &str, bytes: &[u8]) -> Result<bool> {
        let path = self.path(namespace, key);
        if path.exists() {
            return Ok(false);
        }
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| RemoteError::io(dir, e))?;
        let tmp = dir.join(format!(".{key}.{}.{}.tmp", std::process::id(), TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()
        };
        write().map_err(|e| RemoteError::io(&tmp, e))?;
        let created = match fs::hard_link(&tmp, &path) {
            Ok(()) => true,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => false,
            Err(e) => {
                let _ = fs::remove_file(&tmp);
                return Err(RemoteError::io(&path, e));
            }
        };
        let _ = fs::remove_file(&tmp);
        Ok(created)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_write_wins() {
        let dir = tempfile::tempdir().unwrap();
        let c = DiskCache::open(dir.path()).unwrap();
        let k = cache_key(&["seg#0", "model", "epistemic", "abc"]);
        assert_eq!(c.get("chat", &k).unwrap(), None);
        assert!(c.put("chat", &k, b"first").unwrap());
        assert!(!c.put("chat", &k, b"second").unwrap());
        assert_eq!(c.get("chat", &k).unwrap().unwrap(), b"first");
        assert_ne!(k, cache_key(&["seg#0model", "epistemic", "abc"]));
    }

    #[test]
    fn concurrent_writers_agree() {
        let dir = tempfile::tempdir().unwrap();
        let c = DiskCache::open(dir.path()).unwrap();
        let k = cache_key(&["x"]);
        std::thread::scope(|s| {
            for i in 0..8 {
                let c = c.clone();
                let k = k.clone();
                s.spawn(move || c.put("ns", &k, format!("v{i}").as_bytes()).unwrap());
            }
        });
        let v = String::from_utf8(c.get("ns", &k).unwrap().unwrap()).unwrap();
        assert!(v.starts_with('v') && v.len() == 2);
        let leftovers = fs::read_dir(c.path("ns", &k).parent().unwrap()).unwrap().count();
        assert_eq!(leftovers, 1);
    }
}
