//! On-disk content-addressed response cache: one JSON file per
//! [`CacheKey`] under a configurable directory.
//!
//! Writes go to a temp file first and are renamed into place, so
//! concurrent writers of the same key race harmlessly (payloads for a
//! key are identical) and readers never see a truncated entry.

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::types::Generation;

use super::CacheKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub model_id: String,
    pub generation: Generation,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<ResponseCache> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.digest()))
    }

    /// Returns the cached response, or None when absent. Unreadable
    /// entries count as misses so a corrupted file only costs a re-fetch.
    pub fn load(&self, key: &CacheKey) -> Option<CachedResponse> {
        let path = self.entry_path(key);
        let text = std::fs::read_to_string(&path).ok()?;
        match serde_json::from_str(&text) {
            Ok(entry) => Some(entry),
            Err(e) => {
                log::warn!("discarding unreadable cache entry {}: {e}", path.display());
                None
            }
        }
    }

    pub fn store(&self, key: &CacheKey, entry: &CachedResponse) -> io::Result<()> {
        let body = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        let final_path = self.entry_path(key);
        let temp_path = self.dir.join(format!(".{}.tmp-{}", key.digest(), std::process::id()));
        std::fs::write(&temp_path, body)?;
        std::fs::rename(&temp_path, &final_path)
    }

    /// Removes entries, optionally only those for one model id.
    /// Returns how many were removed.
    pub fn purge(&self, model_id: Option<&str>) -> io::Result<usize> {
        let mut removed = 0;
        let entries = match std::fs::read_dir(&self.dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(e),
        };
        for entry in entries {
            let path = entry?.path();
            if path.extension().map(|e| e != "json").unwrap_or(true) {
                continue;
            }
            let matches = match model_id {
                None => true,
                Some(wanted) => std::fs::read_to_string(&path)
                    .ok()
                    .and_then(|text| serde_json::from_str::<CachedResponse>(&text).ok())
                    .map(|entry| entry.model_id == wanted)
                    .unwrap_or(false),
            };
            if matches {
                std::fs::remove_file(&path)?;
                removed += 1;
            }
        }
        Ok(removed)
    }
}

#[cfg(test)]
mod tests {
    use super::super::GenerationRequest;
    use super::*;
    use crate::types::TokenInfo;

    fn entry(model_id: &str, text: &str) -> CachedResponse {
        CachedResponse {
            model_id: model_id.to_string(),
            generation: Generation::new(
                text,
                vec![TokenInfo::new(text, 0.9)],
                model_id,
                0.8,
                "fp",
            )
            .unwrap(),
        }
    }

    fn key(tag: &str, index: u32) -> CacheKey {
        CacheKey::compute("m", &GenerationRequest::user_prompt(tag), index)
    }

    #[test]
    fn store_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let stored = entry("m", "Paris");
        cache.store(&key("q", 0), &stored).unwrap();
        assert_eq!(cache.load(&key("q", 0)).unwrap(), stored);
        assert!(cache.load(&key("q", 1)).is_none());
    }

    #[test]
    fn corrupt_entry_counts_as_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let k = key("q", 0);
        std::fs::write(dir.path().join(format!("{}.json", k.digest())), "not json").unwrap();
        assert!(cache.load(&k).is_none());
    }

    #[test]
    fn purge_counts_by_model() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        for i in 0..3 {
            cache.store(&key("a", i), &entry("model-a", "x")).unwrap();
        }
        for i in 0..2 {
            cache.store(&key("b", i), &entry("model-b", "y")).unwrap();
        }
        assert_eq!(cache.purge(Some("model-a")).unwrap(), 3);
        assert_eq!(cache.purge(None).unwrap(), 2);
        assert_eq!(cache.purge(None).unwrap(), 0);
    }

    #[test]
    fn purge_of_empty_cache_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path().join("fresh")).unwrap();
        assert_eq!(cache.purge(None).unwrap(), 0);
    }
}
