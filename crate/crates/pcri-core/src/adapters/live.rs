//! Live inference over the chat-completion wire protocol: one request per
//! view carrying the rendered prompt and the view's image as a lossless PNG
//! data URL. Transport failures and 429/5xx statuses are retried with
//! exponential backoff; auth failures and malformed bodies are not.

use super::AdapterError;
use base64::Engine as _;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::io::Cursor;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_s: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_base_s: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpointConfig {
    /// Full URL of the chat-completion endpoint.
    pub base_url: String,
    /// Value sent in the request's `model` field.
    pub model_name: String,
    /// Name of the environment variable holding the bearer token; an unset
    /// or empty variable sends no auth header.
    pub auth_token_env_var: String,
    /// Upper bound on in-flight requests.
    pub max_parallel_requests: usize,
    pub timeout_s: f64,
    pub retry: RetryPolicy,
    /// Per-dataset prompt template with a `{query}` placeholder; every view
    /// of a sample receives the same rendered prompt.
    pub prompt_template: String,
}

impl ModelEndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            auth_token_env_var: "PCRI_API_TOKEN".to_string(),
            max_parallel_requests: 4,
            timeout_s: 60.0,
            retry: RetryPolicy::default(),
            prompt_template: "{query}".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveResponse {
    pub text: String,
    pub attempts: u32,
}

pub struct LiveClient {
    agent: ureq::Agent,
    config: ModelEndpointConfig,
    auth_token: Option<String>,
}

impl LiveClient {
    pub fn new(config: ModelEndpointConfig) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .build();
        let auth_token =
            std::env::var(&config.auth_token_env_var).ok().filter(|t| !t.is_empty());
        Self { agent: ureq::Agent::new_with_config(agent_config), config, auth_token }
    }

    pub fn config(&self) -> &ModelEndpointConfig {
        &self.config
    }

    /// One trivial text-only request; lets a run fail fast instead of timing
    /// out on thousands of views.
    pub fn probe(&self) -> Result<(), AdapterError> {
        let payload = self.payload("ping", None);
        self.send_with_retry(&payload).map(|_| ())
    }

    /// Send one view. The image is PNG-encoded (lossless) and embedded as a
    /// base64 data URL.
    pub fn infer(&self, image: &RgbImage, prompt: &str) -> Result<LiveResponse, AdapterError> {
        let mut png = Vec::new();
        image
            .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
            .expect("in-memory png encoding cannot fail");
        let b64 = base64::engine::general_purpose::STANDARD.encode(&png);
        let payload = self.payload(prompt, Some(b64));
        self.send_with_retry(&payload)
    }

    fn payload(&self, prompt: &str, image_b64: Option<String>) -> serde_json::Value {
        let mut content = vec![json!({"type": "text", "text": prompt})];
        if let Some(b64) = image_b64 {
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{b64}")}
            }));
        }
        json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": content}],
        })
    }

    fn send_once(
        &self,
        payload: &serde_json::Value,
    ) -> Result<ureq::http::Response<ureq::Body>, ureq::Error> {
        let mut request = self.agent.post(&self.config.base_url);
        if let Some(token) = &self.auth_token {
            request = request.header("authorization", format!("Bearer {token}"));
        }
        request.send_json(payload)
    }

    fn send_with_retry(&self, payload: &serde_json::Value) -> Result<LiveResponse, AdapterError> {
        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.send_once(payload) {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    match status {
                        200..=299 => {
                            let text = extract_message_text(&mut response)?;
                            return Ok(LiveResponse { text, attempts: attempt });
                        }
                        401 | 403 => return Err(AdapterError::Auth { status }),
                        429 | 500..=599 if attempt < max_attempts => self.backoff(attempt),
                        429 => return Err(AdapterError::RateLimited { attempts: attempt }),
                        500..=599 => {
                            return Err(AdapterError::ServerError { status, attempts: attempt })
                        }
                        other => return Err(AdapterError::Http { status: other }),
                    }
                }
                Err(err) => {
                    let timed_out = matches!(err, ureq::Error::Timeout(_))
                        || matches!(&err, ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut);
                    if attempt < max_attempts {
                        self.backoff(attempt);
                    } else if timed_out {
                        return Err(AdapterError::Timeout { attempts: attempt });
                    } else {
                        return Err(AdapterError::Transport {
                            detail: err.to_string(),
                            attempts: attempt,
                        });
                    }
                }
            }
        }
    }

    fn backoff(&self, attempt: u32) {
        let exponent = attempt.saturating_sub(1).min(16);
        let secs = self.config.retry.backoff_base_s * f64::from(1u32 << exponent);
        if secs > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(secs));
        }
    }
}

/// Pull the first message text out of a chat-completion response body.
fn extract_message_text(
    response: &mut ureq::http::Response<ureq::Body>,
) -> Result<String, AdapterError> {
    let value: serde_json::Value = response
        .body_mut()
        .read_json()
        .map_err(|e| AdapterError::MalformedResponse { detail: e.to_string() })?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| AdapterError::MalformedResponse {
            detail: "missing choices[0].message.content".to_string(),
        })
}
