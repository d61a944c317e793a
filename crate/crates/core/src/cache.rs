//! TTL caches for external requests.
//!
//! An entry stored at `t` with time-to-live `ttl` can be read while
//! `now - t <= ttl`. Both implementations additionally cap the number of
//! entries and evict the least recently used one when full. Storage problems
//! never surface as errors: they are logged and reported as misses.

use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use lru::LruCache;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::{Clock, Timestamp};

/// Default time-to-live for cached external requests: 24 hours.
pub const DEFAULT_TTL: Duration = Duration::from_secs(24 * 60 * 60);

pub trait Cache: Send + Sync {
    fn get(&self, key: &str) -> Option<Vec<u8>>;
    fn put(&self, key: &str, payload: &[u8], ttl: Duration);
}

/// Joins namespace parts into a cache key, e.g. `refset:Q42:5`.
pub fn cache_key(parts: &[&str]) -> String {
    parts.join(":")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub key: String,
    pub payload: Vec<u8>,
    pub stored_at: Timestamp,
    pub ttl: Duration,
}

impl CacheEntry {
    pub fn is_fresh(&self, now: Timestamp) -> bool {
        fresh(self.stored_at, self.ttl, now)
    }
}

fn fresh(stored_at: Timestamp, ttl: Duration, now: Timestamp) -> bool {
    now.saturating_sub(stored_at) <= ttl.as_secs()
}

fn capacity(n: usize) -> NonZeroUsize {
    NonZeroUsize::new(n).unwrap_or(NonZeroUsize::MIN)
}

pub struct MemoryCache {
    clock: Arc<dyn Clock>,
    entries: Mutex<LruCache<String, CacheEntry>>,
}

impl MemoryCache {
    pub fn new(clock: Arc<dyn Clock>, max_entries: usize) -> Self {
        MemoryCache { clock, entries: Mutex::new(LruCache::new(capacity(max_entries))) }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().map(|e| e.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Cache for MemoryCache {
    fn get(&self, key: &str) -> Option<Vec<u8>> {
        let now = self.clock.now();
        let mut entries = self.entries.lock().ok()?;
        match entries.get(key) {
            Some(e) if e.is_fresh(now) => Some(e.payload.clone()),
            Some(_) => {
                entries.pop(key);
                None
            }
            None => None,
        }
    }

    fn put(&self, key: &str, payload: &[u8], ttl: Duration) {
        if key.is_empty() {
            tracing::warn!("refusing to cache under an empty key");
            return;
        }
        let entry = CacheEntry { key: key.to_string(), payload: payload.to_vec(), stored_at: self.clock.now(), ttl };
        if let Ok(mut entries) = self.entries.lock() {
            entries.put(key.to_string(), entry);
        }
    }
}

/// Per-entry metadata persisted next to the payload file.
#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    key: String,
    stored_at: Timestamp,
    ttl_secs: u64,
}

/// Directory-backed cache: `<sha256(key)>.bin` holds the payload and
/// `<sha256(key)>.meta` a JSON [`Meta`] record.
pub struct DiskCache {
    root: PathBuf,
    clock: Arc<dyn Clock>,
    index: Mutex<LruCache<String, ()>>,
}

impl DiskCache {
    pub fn open(root: impl Into<PathBuf>, clock: Arc<dyn Clock>, max_entries: usize) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut existing: Vec<(Timestamp, String)> = Vec::new();
        for entry in fs::read_dir(&root)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "meta") {
                if let Some(meta) = read_meta(&path) {
                    existing.push((meta.stored_at, meta.key));
                }
            }
        }
        existing.sort();
        let cache = DiskCache { root, clock, index: Mutex::new(LruCache::new(capacity(max_entries))) };
        for (_, key) in existing {
            cache.touch(&key);
        }
        Ok(cache)
    }

    fn stem(&self, key: &str) -> PathBuf {
        self.root.join(hex::encode(Sha256::digest(key.as_bytes())))
    }

    fn remove(&self, key: &str) {
        let stem = self.stem(key);
        let _ = fs::remove_file(stem.with_extension("bin"));
        let _ = fs::remove_file(stem.with_extension("meta"));
    }

    fn touch(&self, key: &str) {
        let evicted = match self.index.lock() {
            Ok(mut index) => index.push(key.to_string(), ()).filter(|(k, _)| k != key),
            Err(_) => None,
        };
        if let Some((old, _)) = evicted {
            self.remove(&old);
        }
    }

    fn try_get(&self, key: &str) -> std::io::Result<Option<Vec<u8>>> {
        let stem = self.stem(key);
        let meta_path = stem.with_extension("meta");
        if !meta_path.exists() {
            return Ok(None);
        }
        let meta: Meta = serde_json::from_slice(&fs::read(&meta_path)?)?;
        if meta.key != key {
            return Ok(None);
        }
        if !fresh(meta.stored_at, Duration::from_secs(meta.ttl_secs), self.clock.now()) {
            self.remove(key);
            if let Ok(mut index) = self.index.lock() {
                index.pop(key);
            }
            return Ok(None);
        }
        let payload = fs::read(stem.with_extension("bin"))?;
        self.touch(key);
        Ok(Some(payload))
    }

    fn try_put(&self, key: &str, payload: &[u8], ttl: Duration) -> std::io::Result<()> {
        let stem = self.stem(key);
        let meta = Meta { key: key.to_string(), stored_at: self.clock.now(), ttl_secs: ttl.as_secs() };
        write_atomic(&stem.with_extension("bin"), payload)?;
        write_atomic(&stem.with_extension("meta"), &serde_json::to_vec(&meta)?)?;
        self.touch(key);
        Ok(())
    }
}

fn read_meta(path: &Path) -> Option<Meta> {
    serde_json::from_slice(&fs::read(path).ok()?).ok()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

impl Cache for DiskCache {
    fn get(&self, key: &str) -> Option<Vec<u8>> {
        match self.try_get(key) {
            Ok(v) => v,
            Err(e) => {
                tracing::warn!(%key, error = %e, "cache read failed; treating as miss");
                None
            }
        }
    }

    fn put(&self, key: &str, payload: &[u8], ttl: Duration) {
        if key.is_empty() {
            tracing::warn!("refusing to cache under an empty key");
            return;
        }
        if let Err(e) = self.try_put(key, payload, ttl) {
            tracing::warn!(%key, error = %e, "cache write failed");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use proptest::prelude::*;

    const HOUR: Duration = Duration::from_secs(3600);

    fn caches(clock: Arc<ManualClock>) -> (MemoryCache, DiskCache, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let disk = DiskCache::open(dir.path(), clock.clone(), 100).unwrap();
        (MemoryCache::new(clock, 100), disk, dir)
    }

    #[test]
    fn ttl_expiry() {
        let clock = Arc::new(ManualClock::new(1_000_000));
        let (mem, disk, _dir) = caches(clock.clone());
        for cache in [&mem as &dyn Cache, &disk] {
            clock.set(1_000_000);
            cache.put("k", b"payload", DEFAULT_TTL);
            clock.advance(HOUR);
            assert_eq!(cache.get("k").as_deref(), Some(&b"payload"[..]));
            clock.set(1_000_000 + 23 * 3600 + 59 * 60);
            assert!(cache.get("k").is_some());
            clock.set(1_000_000 + 24 * 3600 + 60);
            assert!(cache.get("k").is_none());
            clock.set(1_000_000 + 25 * 3600);
            assert!(cache.get("k").is_none());
            assert!(cache.get("absent").is_none());
        }
    }

    #[test]
    fn empty_key_is_never_stored() {
        let clock = Arc::new(ManualClock::new(0));
        let (mem, disk, _dir) = caches(clock);
        mem.put("", b"x", HOUR);
        disk.put("", b"x", HOUR);
        assert!(mem.get("").is_none());
        assert!(disk.get("").is_none());
    }

    #[test]
    fn lru_eviction() {
        let clock = Arc::new(ManualClock::new(0));
        let dir = tempfile::tempdir().unwrap();
        let mem = MemoryCache::new(clock.clone(), 2);
        let disk = DiskCache::open(dir.path(), clock, 2).unwrap();
        for cache in [&mem as &dyn Cache, &disk] {
            cache.put("a", b"1", HOUR);
            cache.put("b", b"2", HOUR);
            assert!(cache.get("a").is_some());
            cache.put("c", b"3", HOUR);
            assert!(cache.get("b").is_none(), "b was least recently used");
            assert!(cache.get("a").is_some());
            assert!(cache.get("c").is_some());
        }
    }

    #[test]
    fn disk_cache_survives_reopen() {
        let clock = Arc::new(ManualClock::new(50));
        let dir = tempfile::tempdir().unwrap();
        DiskCache::open(dir.path(), clock.clone(), 10).unwrap().put("refset:Q1:5", b"abc", HOUR);
        let reopened = DiskCache::open(dir.path(), clock, 10).unwrap();
        assert_eq!(reopened.get("refset:Q1:5").as_deref(), Some(&b"abc"[..]));
    }

    #[test]
    fn corrupt_meta_is_a_miss() {
        let clock = Arc::new(ManualClock::new(0));
        let dir = tempfile::tempdir().unwrap();
        let disk = DiskCache::open(dir.path(), clock, 10).unwrap();
        disk.put("k", b"v", HOUR);
        fs::write(disk.stem("k").with_extension("meta"), b"{not json").unwrap();
        assert!(disk.get("k").is_none());
    }

    proptest! {
        #[test]
        fn round_trip_is_byte_exact(payload in proptest::collection::vec(any::<u8>(), 0..512), key in "[a-z:0-9]{1,24}") {
            let clock = Arc::new(ManualClock::new(7));
            let (mem, disk, _dir) = caches(clock);
            mem.put(&key, &payload, HOUR);
            disk.put(&key, &payload, HOUR);
            prop_assert_eq!(mem.get(&key), Some(payload.clone()));
            prop_assert_eq!(disk.get(&key), Some(payload));
        }
    }
}
