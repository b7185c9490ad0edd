use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, GatewayError, TokenUsage};

/// One stored exchange, written as `<dir>/<key[..2]>/<key>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub request: CompletionRequest,
    pub response: String,
    pub usage: TokenUsage,
    pub cost: f64,
    pub latency_ms: u64,
    /// Seconds since the Unix epoch at store time.
    pub timestamp: u64,
}

pub enum CacheStore {
    Memory(Mutex<HashMap<String, CacheRecord>>),
    Directory(PathBuf),
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl CacheStore {
    pub fn memory() -> Self {
        CacheStore::Memory(Mutex::new(HashMap::new()))
    }

    pub fn directory(dir: &Path) -> Result<Self, GatewayError> {
        fs::create_dir_all(dir)
            .map_err(|e| GatewayError::Cache(format!("creating {}: {e}", dir.display())))?;
        Ok(CacheStore::Directory(dir.to_path_buf()))
    }

    fn path_for(dir: &Path, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or(key);
        dir.join(shard).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheRecord>, GatewayError> {
        match self {
            CacheStore::Memory(map) => Ok(map.lock().expect("cache poisoned").get(key).cloned()),
            CacheStore::Directory(dir) => {
                let path = Self::path_for(dir, key);
                let bytes = match fs::read(&path) {
                    Ok(b) => b,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
                    Err(e) => {
                        return Err(GatewayError::Cache(format!(
                            "reading {}: {e}",
                            path.display()
                        )))
                    }
                };
                serde_json::from_slice(&bytes)
                    .map(Some)
                    .map_err(|e| GatewayError::Cache(format!("decoding {}: {e}", path.display())))
            }
        }
    }

    /// Directory writes go through a temp file and a rename so readers
    /// never observe a partial record.
    pub fn put(&self, record: &CacheRecord) -> Result<(), GatewayError> {
        match self {
            CacheStore::Memory(map) => {
                map.lock()
                    .expect("cache poisoned")
                    .insert(record.key.clone(), record.clone());
                Ok(())
            }
            CacheStore::Directory(dir) => {
                let path = Self::path_for(dir, &record.key);
                let parent = path.parent().expect("sharded path has a parent");
                let io = |e: std::io::Error| {
                    GatewayError::Cache(format!("writing {}: {e}", path.display()))
                };
                fs::create_dir_all(parent).map_err(io)?;
                let tmp = parent.join(format!(
                    ".{}.{}.{}.tmp",
                    record.key,
                    std::process::id(),
                    TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
                ));
                let bytes = serde_json::to_vec_pretty(record).expect("record serializes");
                fs::write(&tmp, bytes).map_err(io)?;
                fs::rename(&tmp, &path).map_err(io)
            }
        }
    }
}
