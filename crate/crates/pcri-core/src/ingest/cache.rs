//! Append-only response cache: one JSON record per line, keyed by
//! (model, dataset, sample, view descriptor, prompt hash). Later duplicates
//! of a key are rejected at load with a warning, never silently replaced.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub model: String,
    pub dataset: String,
    pub sample: String,
    /// View descriptor: `full` or `n{n}r{row}c{col}`.
    pub view: String,
    pub prompt_sha: String,
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}/{}",
            self.model, self.dataset, self.sample, self.view, self.prompt_sha
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    #[serde(flatten)]
    pub key: CacheKey,
    pub response: String,
    /// Unix seconds when the response was recorded.
    pub timestamp: u64,
    pub attempts: u32,
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    records: BTreeMap<CacheKey, CacheRecord>,
    warnings: Vec<String>,
}

impl ResponseCache {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let file = File::open(path)?;
        let reader = BufReader::new(file);
        let mut cache = ResponseCache::default();
        for (ix, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CacheRecord = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), ix + 1),
                )
            })?;
            if cache.records.contains_key(&record.key) {
                cache.warnings.push(format!(
                    "{}:{}: duplicate cache record for {} ignored",
                    path.display(),
                    ix + 1,
                    record.key
                ));
            } else {
                cache.records.insert(record.key.clone(), record);
            }
        }
        Ok(cache)
    }

    pub fn insert(&mut self, record: CacheRecord) {
        self.records.entry(record.key.clone()).or_insert(record);
    }

    pub fn response(&self, key: &CacheKey) -> Option<&str> {
        self.records.get(key).map(|r| r.response.as_str())
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.records.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Distinct model ids present in the cache, sorted.
    pub fn models(&self) -> Vec<String> {
        let mut models: Vec<String> = self.records.keys().map(|k| k.model.clone()).collect();
        models.sort();
        models.dedup();
        models
    }
}

/// Serialized writer appending one record per line; live workers share it
/// behind a mutex so the file stays append-consistent.
pub struct CacheWriter {
    out: BufWriter<File>,
}

impl CacheWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?) })
    }

    pub fn append(&mut self, record: &CacheRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

pub fn now_unix_seconds() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(sample: &str, response: &str) -> CacheRecord {
        CacheRecord {
            key: CacheKey {
                model: "m".to_string(),
                dataset: "d".to_string(),
                sample: sample.to_string(),
                view: "n2r0c1".to_string(),
                prompt_sha: "0011223344556677".to_string(),
            },
            response: response.to_string(),
            timestamp: 7,
            attempts: 1,
        }
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mut writer = CacheWriter::create(&path).unwrap();
        writer.append(&record("s1", "yes")).unwrap();
        writer.append(&record("s2", "no")).unwrap();
        drop(writer);

        let cache = ResponseCache::load(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.response(&record("s1", "").key), Some("yes"));
        assert!(cache.warnings().is_empty());
        assert_eq!(cache.models(), vec!["m".to_string()]);
    }

    #[test]
    fn duplicate_keys_keep_first_and_warn() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mut writer = CacheWriter::create(&path).unwrap();
        writer.append(&record("s1", "first")).unwrap();
        writer.append(&record("s1", "second")).unwrap();
        drop(writer);

        let cache = ResponseCache::load(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.response(&record("s1", "").key), Some("first"));
        assert_eq!(cache.warnings().len(), 1);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        std::fs::write(&path, "{\"not\": \"a record\"}\n").unwrap();
        let err = ResponseCache::load(&path).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
    }
}
