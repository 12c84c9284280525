//! Replay adapter: answer every view from a previously recorded cache.
//!
//! A miss is an error, never a silent fallback to live inference, so a replay
//! run either reproduces the original scores exactly or fails loudly.

use super::AdapterError;
use crate::ingest::cache::{CacheKey, ResponseCache};

/// Look up the stored response for a view. Missing keys are a hard error.
pub fn infer_replay<'c>(cache: &'c ResponseCache, key: &CacheKey) -> Result<&'c str, AdapterError> {
    cache
        .response(key)
        .ok_or_else(|| AdapterError::CacheMiss { key: key.clone() })
}
