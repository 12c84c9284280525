//! Model adapters: obtain a response for a (view, query) pair from a live
//! chat-completion endpoint, a replay cache, or a built-in synthetic oracle.

mod live;
mod replay;
mod synthetic;

pub use live::{LiveClient, LiveResponse, ModelEndpointConfig, RetryPolicy};
pub use replay::infer_replay;
pub use synthetic::{infer_synthetic, SyntheticModelSpec, WRONG_ANSWER};

use crate::ingest::cache::CacheKey;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdapterError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("server error HTTP {status} after {attempts} attempt(s)")]
    ServerError { status: u16, attempts: u32 },
    #[error("unexpected HTTP status {status}")]
    Http { status: u16 },
    #[error("malformed response: {detail}")]
    MalformedResponse { detail: String },
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { detail: String, attempts: u32 },
    #[error("cache miss for {key}")]
    CacheMiss { key: CacheKey },
}

/// Render a prompt template, substituting the `{query}` placeholder.
pub fn render_prompt(template: &str, query: &str) -> String {
    template.replace("{query}", query)
}

/// Short content hash identifying a rendered prompt in cache keys.
pub fn prompt_sha(prompt: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(prompt.as_bytes());
    hex::encode(&digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_rendering_substitutes_query() {
        assert_eq!(render_prompt("{query}", "hi"), "hi");
        assert_eq!(
            render_prompt("Answer briefly: {query}", "what color?"),
            "Answer briefly: what color?"
        );
    }

    #[test]
    fn prompt_sha_is_stable_and_distinct() {
        let a = prompt_sha("what color?");
        let b = prompt_sha("what color?");
        let c = prompt_sha("what shape?");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 16);
    }
}
