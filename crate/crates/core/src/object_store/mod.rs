//! Content-addressable blob storage.
//!
//! Two backends share one contract: a local filesystem tree and an
//! S3-compatible HTTP endpoint. Objects are stored under path-like keys,
//! optionally gzip-compressed with the flag carried in backend metadata,
//! and reads address *logical* (decompressed) bytes so ranged reads are
//! always consistent with slicing a full read.
//!
//! Key scheme: raw filings keep the archive's own naming under
//! `filings/raw/`, document bodies deduplicate under
//! `documents/raw/<sha1>`, extracted text under `documents/text/<sha1>`.

mod fs;
mod s3;

pub use fs::FsStore;
pub use s3::{S3Config, S3Store};

use std::os::fd::AsRawFd;
use std::path::Path;

use crate::edgar_client::{matches_any_signature, ByteRange};

pub const RAW_FILING_PREFIX: &str = "filings/raw/";
pub const DOCUMENT_PREFIX: &str = "documents/raw/";
pub const TEXT_PREFIX: &str = "documents/text/";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ObjectStoreError {
    #[error("invalid key or path: {0}")]
    InvalidPath(String),
    #[error("invalid digest: {0}")]
    InvalidDigest(String),
    #[error("invalid byte range: {0}")]
    InvalidRange(String),
    #[error("object not found: {0}")]
    NotFound(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("storage quota exceeded: {0}")]
    QuotaExceeded(String),
    #[error("object corrupt: {0}")]
    CorruptObject(String),
    #[error("store lock unavailable: {0}")]
    LockHeld(String),
}

/// Where and how a blob is stored.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ObjectRef {
    pub key: String,
    pub compressed: bool,
    pub stored_length: u64,
    pub logical_length: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct StoreStats {
    pub object_count: u64,
    pub total_stored_bytes: u64,
    pub total_logical_bytes: u64,
}

pub type KeyIter = Box<dyn Iterator<Item = Result<String, ObjectStoreError>> + Send>;

pub trait ObjectStore: Send + Sync {
    /// Persist a blob. Re-putting identical logical bytes is a no-op;
    /// different bytes overwrite with a warning logged (archive refetches
    /// can legitimately differ after upstream corrections).
    fn put(&self, key: &str, data: &[u8], compress: bool) -> Result<ObjectRef, ObjectStoreError>;

    /// Read logical bytes, optionally a half-open range of them. A range
    /// reaching past end of object is truncated at end of object.
    fn get(&self, key: &str, byte_range: Option<ByteRange>) -> Result<Vec<u8>, ObjectStoreError>;

    /// Metadata without the payload; `None` when the key is absent.
    fn head(&self, key: &str) -> Result<Option<ObjectRef>, ObjectStoreError>;

    fn exists(&self, key: &str) -> Result<bool, ObjectStoreError> {
        Ok(self.head(key)?.is_some())
    }

    /// Remove a blob; reports whether it existed.
    fn delete(&self, key: &str) -> Result<bool, ObjectStoreError>;

    /// All keys under a prefix, lexicographically ordered.
    fn list_keys(&self, prefix: &str) -> Result<KeyIter, ObjectStoreError>;

    fn stats(&self) -> Result<StoreStats, ObjectStoreError>;
}

pub fn validate_key(key: &str) -> Result<(), ObjectStoreError> {
    if key.is_empty() {
        return Err(ObjectStoreError::InvalidPath("key is empty".into()));
    }
    if key.starts_with('/') {
        return Err(ObjectStoreError::InvalidPath(format!(
            "key {key:?} must not start with '/'"
        )));
    }
    if key.split('/').any(|seg| seg == ".." || seg.is_empty() || seg == ".") {
        return Err(ObjectStoreError::InvalidPath(format!(
            "key {key:?} contains an empty, '.' or '..' segment"
        )));
    }
    Ok(())
}

pub fn validate_sha1(digest: &str) -> Result<(), ObjectStoreError> {
    let ok = digest.len() == 40
        && digest
            .chars()
            .all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c));
    if ok {
        Ok(())
    } else {
        Err(ObjectStoreError::InvalidDigest(format!(
            "{digest:?} is not 40 lowercase hex characters"
        )))
    }
}

/// Key for a raw filing or index file, mirroring the archive's own path.
pub fn key_for_raw_filing(edgar_path: &str) -> Result<String, ObjectStoreError> {
    crate::edgar_client::validate_path(edgar_path)
        .map_err(|e| ObjectStoreError::InvalidPath(e.to_string()))?;
    Ok(format!("{RAW_FILING_PREFIX}{edgar_path}"))
}

/// Key for a deduplicated document body.
pub fn key_for_document(sha1: &str) -> Result<String, ObjectStoreError> {
    validate_sha1(sha1)?;
    Ok(format!("{DOCUMENT_PREFIX}{sha1}"))
}

/// Key for extracted text, addressed by the source document's digest.
pub fn key_for_text(sha1: &str) -> Result<String, ObjectStoreError> {
    validate_sha1(sha1)?;
    Ok(format!("{TEXT_PREFIX}{sha1}"))
}

/// Slice logical bytes by a half-open range, truncating at end of data.
pub(crate) fn slice_range(data: Vec<u8>, range: Option<ByteRange>) -> Result<Vec<u8>, ObjectStoreError> {
    match range {
        None => Ok(data),
        Some(r) => {
            if r.is_empty() {
                return Err(ObjectStoreError::InvalidRange(format!(
                    "[{}, {}) is empty",
                    r.start, r.end
                )));
            }
            let start = (r.start as usize).min(data.len());
            let end = (r.end as usize).min(data.len());
            Ok(data[start..end].to_vec())
        }
    }
}

pub(crate) fn gzip_bytes(data: &[u8]) -> Result<Vec<u8>, ObjectStoreError> {
    use std::io::Write;
    let mut encoder = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
    encoder
        .write_all(data)
        .and_then(|_| encoder.finish())
        .map_err(|e| ObjectStoreError::BackendUnavailable(format!("gzip failed: {e}")))
}

pub(crate) fn gunzip_bytes(data: &[u8], key: &str) -> Result<Vec<u8>, ObjectStoreError> {
    use std::io::Read;
    let mut decoder = flate2::read::GzDecoder::new(data);
    let mut out = Vec::new();
    decoder.read_to_end(&mut out).map_err(|e| {
        ObjectStoreError::CorruptObject(format!("{key}: flagged compressed but inflate failed: {e}"))
    })?;
    Ok(out)
}

/// Maintenance sweep target classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepPredicate {
    RateLimited,
    Empty,
    AccessDenied,
}

impl std::str::FromStr for SweepPredicate {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rate-limited" | "rate_limited" => Ok(SweepPredicate::RateLimited),
            "empty" => Ok(SweepPredicate::Empty),
            "access-denied" | "access_denied" => Ok(SweepPredicate::AccessDenied),
            other => Err(format!("unknown sweep predicate {other:?}")),
        }
    }
}

/// Marker phrases identifying junk payloads that sometimes get persisted
/// when the archive answers a fetch with an error page.
#[derive(Debug, Clone)]
pub struct SweepSignatures {
    pub rate_limited: Vec<String>,
    pub access_denied: Vec<String>,
}

impl Default for SweepSignatures {
    fn default() -> Self {
        SweepSignatures {
            rate_limited: crate::edgar_client::DEFAULT_RATE_LIMIT_SIGNATURES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            access_denied: vec![
                "<Code>AccessDenied</Code>".to_string(),
                "Access Denied".to_string(),
            ],
        }
    }
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct SweepReport {
    pub matched: Vec<(String, String)>,
    pub scanned: u64,
    pub deleted: u64,
}

/// Scan objects under `prefix` for the given junk class; with
/// `dry_run=false` the matches are deleted after being listed. Callers
/// must hold the store's exclusive lock so a sweep never races ingestion.
pub fn sweep(
    store: &dyn ObjectStore,
    prefix: &str,
    predicate: SweepPredicate,
    signatures: &SweepSignatures,
    dry_run: bool,
) -> Result<SweepReport, ObjectStoreError> {
    let mut report = SweepReport::default();
    for key in store.list_keys(prefix)? {
        let key = key?;
        report.scanned += 1;
        let matched_reason = match predicate {
            SweepPredicate::Empty => {
                let meta = store
                    .head(&key)?
                    .ok_or_else(|| ObjectStoreError::NotFound(key.clone()))?;
                (meta.logical_length == 0).then(|| "empty object".to_string())
            }
            SweepPredicate::RateLimited => {
                let body = store.get(&key, None)?;
                matches_any_signature(&body, &signatures.rate_limited)
                    .then(|| "rate-limit payload".to_string())
            }
            SweepPredicate::AccessDenied => {
                let body = store.get(&key, None)?;
                matches_any_signature(&body, &signatures.access_denied)
                    .then(|| "access-denied payload".to_string())
            }
        };
        if let Some(reason) = matched_reason {
            report.matched.push((key, reason));
        }
    }
    if !dry_run {
        for (key, _) in &report.matched {
            if store.delete(key)? {
                report.deleted += 1;
            }
        }
    }
    Ok(report)
}

/// Advisory store lock. Ingestion takes it shared, sweeps take it
/// exclusive, so a sweep never runs concurrently with ingestion over the
/// same store. Released automatically when dropped (or when the process
/// dies — it is an OS-level flock).
pub struct StoreLock {
    _file: std::fs::File,
}

impl StoreLock {
    pub fn shared(path: &Path) -> Result<Self, ObjectStoreError> {
        Self::acquire(path, libc::LOCK_SH)
    }

    pub fn exclusive(path: &Path) -> Result<Self, ObjectStoreError> {
        Self::acquire(path, libc::LOCK_EX)
    }

    fn acquire(path: &Path, op: libc::c_int) -> Result<Self, ObjectStoreError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| ObjectStoreError::BackendUnavailable(e.to_string()))?;
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path)
            .map_err(|e| ObjectStoreError::BackendUnavailable(e.to_string()))?;
        let rc = unsafe { libc::flock(file.as_raw_fd(), op | libc::LOCK_NB) };
        if rc != 0 {
            return Err(ObjectStoreError::LockHeld(format!(
                "{} is locked by another pipeline or sweep process",
                path.display()
            )));
        }
        Ok(StoreLock { _file: file })
    }
}
