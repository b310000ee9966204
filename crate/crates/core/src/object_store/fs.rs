//! Filesystem backend.
//!
//! Layout under the configured root:
//!
//! ```text
//! root/objects/<key>        payload (gzip bytes when compressed)
//! root/meta/<key>           present only for compressed objects:
//!                           one line "gzip <logical_length>"
//! ```
//!
//! Digest-named keys are sharded by their first two characters
//! (`documents/raw/a9/a999...`) so content directories never grow into
//! one giant flat listing. Sharding is invisible in the key space: listings
//! translate back to logical keys, and lexicographic order is preserved
//! because a digest's shard directory shares its prefix.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use super::{
    gunzip_bytes, gzip_bytes, slice_range, validate_key, KeyIter, ObjectRef, ObjectStore,
    ObjectStoreError, StoreStats,
};
use crate::edgar_client::ByteRange;

pub struct FsStore {
    objects_root: PathBuf,
    meta_root: PathBuf,
}

fn is_hex40(s: &str) -> bool {
    s.len() == 40 && s.chars().all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c))
}

fn io_error(e: std::io::Error) -> ObjectStoreError {
    match e.kind() {
        ErrorKind::StorageFull | ErrorKind::QuotaExceeded => {
            ObjectStoreError::QuotaExceeded(e.to_string())
        }
        _ => ObjectStoreError::BackendUnavailable(e.to_string()),
    }
}

impl FsStore {
    pub fn open(root: &Path) -> Result<Self, ObjectStoreError> {
        let objects_root = root.join("objects");
        let meta_root = root.join("meta");
        fs::create_dir_all(&objects_root).map_err(io_error)?;
        fs::create_dir_all(&meta_root).map_err(io_error)?;
        Ok(FsStore { objects_root, meta_root })
    }

    /// Physical relative path for a key: digest basenames gain a
    /// two-character shard directory.
    fn shard(key: &str) -> String {
        match key.rsplit_once('/') {
            Some((dir, base)) if is_hex40(base) => format!("{dir}/{}/{base}", &base[..2]),
            None if is_hex40(key) => format!("{}/{key}", &key[..2]),
            _ => key.to_string(),
        }
    }

    /// Reverse of `shard`.
    fn unshard(physical: &str) -> String {
        let parts: Vec<&str> = physical.split('/').collect();
        if parts.len() >= 2 {
            let base = parts[parts.len() - 1];
            let shard = parts[parts.len() - 2];
            if is_hex40(base) && shard.len() == 2 && base.starts_with(shard) {
                let mut kept = parts[..parts.len() - 2].to_vec();
                kept.push(base);
                return kept.join("/");
            }
        }
        physical.to_string()
    }

    fn object_path(&self, key: &str) -> PathBuf {
        self.objects_root.join(Self::shard(key))
    }

    fn meta_path(&self, key: &str) -> PathBuf {
        self.meta_root.join(Self::shard(key))
    }

    fn read_meta(&self, key: &str) -> Result<Option<u64>, ObjectStoreError> {
        match fs::read_to_string(self.meta_path(key)) {
            Ok(content) => {
                let logical = content
                    .trim()
                    .strip_prefix("gzip ")
                    .and_then(|n| n.parse::<u64>().ok())
                    .ok_or_else(|| {
                        ObjectStoreError::CorruptObject(format!(
                            "{key}: unreadable compression metadata"
                        ))
                    })?;
                Ok(Some(logical))
            }
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_error(e)),
        }
    }

    fn write_atomic(path: &Path, data: &[u8]) -> Result<(), ObjectStoreError> {
        let parent = path.parent().expect("object paths always have a parent");
        fs::create_dir_all(parent).map_err(io_error)?;
        let tmp = parent.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            rand::random::<u64>()
        ));
        fs::write(&tmp, data).map_err(io_error)?;
        fs::rename(&tmp, path).map_err(io_error)
    }

    fn logical_bytes(&self, key: &str) -> Result<Vec<u8>, ObjectStoreError> {
        let stored = match fs::read(self.object_path(key)) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == ErrorKind::NotFound => {
                return Err(ObjectStoreError::NotFound(key.to_string()))
            }
            Err(e) => return Err(io_error(e)),
        };
        match self.read_meta(key)? {
            Some(_) => gunzip_bytes(&stored, key),
            None => Ok(stored),
        }
    }
}

impl ObjectStore for FsStore {
    fn put(&self, key: &str, data: &[u8], compress: bool) -> Result<ObjectRef, ObjectStoreError> {
        validate_key(key)?;
        if let Some(existing) = self.head(key)? {
            let current = self.logical_bytes(key)?;
            if current == data {
                return Ok(existing);
            }
            log::warn!(
                "overwriting {key}: existing object has different content \
                 ({} bytes -> {} bytes)",
                current.len(),
                data.len()
            );
        }
        let stored = if compress { gzip_bytes(data)? } else { data.to_vec() };
        Self::write_atomic(&self.object_path(key), &stored)?;
        let meta_path = self.meta_path(key);
        if compress {
            Self::write_atomic(&meta_path, format!("gzip {}\n", data.len()).as_bytes())?;
        } else if let Err(e) = fs::remove_file(&meta_path) {
            if e.kind() != ErrorKind::NotFound {
                return Err(io_error(e));
            }
        }
        Ok(ObjectRef {
            key: key.to_string(),
            compressed: compress,
            stored_length: stored.len() as u64,
            logical_length: data.len() as u64,
        })
    }

    fn get(&self, key: &str, byte_range: Option<ByteRange>) -> Result<Vec<u8>, ObjectStoreError> {
        validate_key(key)?;
        slice_range(self.logical_bytes(key)?, byte_range)
    }

    fn head(&self, key: &str) -> Result<Option<ObjectRef>, ObjectStoreError> {
        validate_key(key)?;
        let stored_length = match fs::metadata(self.object_path(key)) {
            Ok(meta) => meta.len(),
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_error(e)),
        };
        let (compressed, logical_length) = match self.read_meta(key)? {
            Some(logical) => (true, logical),
            None => (false, stored_length),
        };
        Ok(Some(ObjectRef {
            key: key.to_string(),
            compressed,
            stored_length,
            logical_length,
        }))
    }

    fn delete(&self, key: &str) -> Result<bool, ObjectStoreError> {
        validate_key(key)?;
        let existed = match fs::remove_file(self.object_path(key)) {
            Ok(()) => true,
            Err(e) if e.kind() == ErrorKind::NotFound => false,
            Err(e) => return Err(io_error(e)),
        };
        let _ = fs::remove_file(self.meta_path(key));
        Ok(existed)
    }

    fn list_keys(&self, prefix: &str) -> Result<KeyIter, ObjectStoreError> {
        let mut keys = Vec::new();
        let mut stack = vec![self.objects_root.clone()];
        while let Some(dir) = stack.pop() {
            let entries = match fs::read_dir(&dir) {
                Ok(e) => e,
                Err(e) if e.kind() == ErrorKind::NotFound => continue,
                Err(e) => return Err(io_error(e)),
            };
            for entry in entries {
                let entry = entry.map_err(io_error)?;
                let path = entry.path();
                if entry.file_type().map_err(io_error)?.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path
                        .strip_prefix(&self.objects_root)
                        .expect("walk stays under objects root")
                        .to_string_lossy()
                        .replace('\\', "/");
                    if rel.rsplit('/').next().is_some_and(|b| b.starts_with(".tmp-")) {
                        continue;
                    }
                    let key = Self::unshard(&rel);
                    if key.starts_with(prefix) {
                        keys.push(key);
                    }
                }
            }
        }
        keys.sort();
        Ok(Box::new(keys.into_iter().map(Ok)))
    }

    fn stats(&self) -> Result<StoreStats, ObjectStoreError> {
        let mut stats = StoreStats::default();
        for key in self.list_keys("")? {
            let key = key?;
            if let Some(meta) = self.head(&key)? {
                stats.object_count += 1;
                stats.total_stored_bytes += meta.stored_length;
                stats.total_logical_bytes += meta.logical_length;
            }
        }
        Ok(stats)
    }
}
