//! Chat-completions client for external filter models.
//!
//! Requests go to `POST {base_url}/chat/completions` with body
//! `{"model", "messages": [{"role": "user", "content": prompt}], "temperature"}`
//! and the reply's `choices[0].message.content` is returned. Transport
//! errors, 429 and 5xx responses are retried with full-jitter exponential
//! backoff; other 4xx responses fail immediately. Successful responses are
//! cached on disk under `{cache_dir}/{key[..2]}/{key}.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::McqItem;
use crate::filter::Responder;
use crate::parallel::bounded_map;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("endpoint failed after {attempts} attempts (last status {last_status:?}): {detail}")]
    EndpointFailure {
        attempts: u32,
        last_status: Option<u16>,
        detail: String,
    },
    #[error("non-retryable HTTP {status}: {body}")]
    NonRetryable { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Protocol(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error("response cache: {0}")]
    Cache(String),
}

fn default_timeout() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff() -> f64 {
    1.0
}
fn default_parallel() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable with the bearer token. No header is sent when absent.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_secs: f64,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default)]
    pub temperature: f64,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_max_retries(),
            backoff_base_secs: default_backoff(),
            max_parallel: default_parallel(),
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: &str| Err(ClientError::Config(m.to_string()));
        if self.max_parallel < 1 {
            return bad("max_parallel must be at least 1");
        }
        if !(self.timeout_secs > 0.0) {
            return bad("timeout must be positive");
        }
        if !(self.backoff_base_secs > 0.0) {
            return bad("backoff_base must be positive");
        }
        if !(self.temperature >= 0.0) {
            return bad("temperature must be non-negative");
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CacheStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub response: String,
    pub status: CacheStatus,
    pub timestamp: DateTime<Utc>,
}

/// SHA-256 over length-prefixed (model, prompt, temperature bits), hex encoded.
pub fn cache_key(model_name: &str, prompt: &str, temperature: f64) -> String {
    let mut hasher = Sha256::new();
    for field in [model_name.as_bytes(), prompt.as_bytes()] {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field);
    }
    hasher.update(temperature.to_bits().to_le_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// One JSON file per key; writes go through a temp file and a rename.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        let bytes = fs::read(self.path_for(key)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// The cached response for `key` if a successful one exists.
    pub fn get_ok(&self, key: &str) -> Option<String> {
        self.get(key)
            .filter(|e| e.status == CacheStatus::Ok)
            .map(|e| e.response)
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), ClientError> {
        let err = |e: std::io::Error| ClientError::Cache(e.to_string());
        let path = self.path_for(&entry.key);
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent).map_err(err)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(err)?;
        let body =
            serde_json::to_vec_pretty(entry).map_err(|e| ClientError::Cache(e.to_string()))?;
        tmp.write_all(&body).map_err(err)?;
        tmp.persist(&path).map_err(|e| err(e.error))?;
        Ok(())
    }

    pub fn put_response(
        &self,
        key: String,
        response: &str,
        status: CacheStatus,
    ) -> Result<(), ClientError> {
        self.put(&CacheEntry {
            key,
            response: response.to_string(),
            status,
            timestamp: Utc::now(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Sends one JSON POST. `Err` means no HTTP status was obtained (connect, timeout, ...).
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<HttpReply, String>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<HttpReply, String> {
        let mut request = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(token) = bearer {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request.send(body).map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

/// Extracts `choices[0].message.content`.
pub fn parse_completion(body: &str) -> Result<String, ClientError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| ClientError::Protocol(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ClientError::Protocol("missing choices[0].message.content".into()))
}

pub struct ModelClient {
    config: EndpointConfig,
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
}

impl ModelClient {
    pub fn new(config: EndpointConfig) -> Result<Self, ClientError> {
        let transport = Arc::new(HttpTransport::new(Duration::from_secs_f64(
            config.timeout_secs,
        )));
        Self::with_transport(config, transport)
    }

    pub fn with_transport(
        config: EndpointConfig,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, ClientError> {
        config.validate()?;
        Ok(Self {
            config,
            transport,
            cache: None,
        })
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn api_key(&self) -> Result<Option<String>, ClientError> {
        match &self.config.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ClientError::MissingApiKey(var.clone())),
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let cap = self.config.backoff_base_secs * 2f64.powi(attempt as i32);
        Duration::from_secs_f64(rand::rng().random_range(0.0..=cap))
    }

    /// One completion, served from the cache when a successful entry exists.
    pub fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let key = cache_key(&self.config.model_name, prompt, self.config.temperature);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get_ok(&key)) {
            return Ok(hit);
        }
        let result = self.request_with_retries(prompt);
        if let Some(cache) = &self.cache {
            match &result {
                Ok(text) => cache.put_response(key, text, CacheStatus::Ok)?,
                Err(e) => cache.put_response(key, &e.to_string(), CacheStatus::Failed)?,
            }
        }
        result
    }

    fn request_with_retries(&self, prompt: &str) -> Result<String, ClientError> {
        let bearer = self.api_key()?;
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        })
        .to_string();
        let url = self.config.url();
        let mut last_status = None;
        let mut detail = String::new();
        for attempt in 0..=self.config.max_retries {
            match self.transport.post_json(&url, bearer.as_deref(), &body) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    return parse_completion(&reply.body)
                }
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    last_status = Some(reply.status);
                    detail = reply.body;
                }
                Ok(reply) => {
                    return Err(ClientError::NonRetryable {
                        status: reply.status,
                        body: reply.body,
                    });
                }
                Err(e) => {
                    last_status = None;
                    detail = e;
                }
            }
            if attempt < self.config.max_retries {
                std::thread::sleep(self.backoff(attempt));
            }
        }
        Err(ClientError::EndpointFailure {
            attempts: self.config.max_retries + 1,
            last_status,
            detail,
        })
    }

    /// Completes every prompt with at most `max_parallel` requests in flight; output order matches input.
    pub fn complete_all(&self, prompts: &[String]) -> Vec<Result<String, ClientError>> {
        bounded_map(prompts, self.config.max_parallel, |p| self.complete(p))
    }
}

impl Responder for ModelClient {
    fn model_id(&self) -> String {
        self.config.model_name.clone()
    }

    fn temperature(&self) -> f64 {
        self.config.temperature
    }

    fn respond(&self, _item: &McqItem, prompt: &str) -> crate::Result<String> {
        Ok(self.complete(prompt)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn cache_keys_are_stable_and_distinct() {
        assert_eq!(cache_key("m", "p", 0.0), cache_key("m", "p", 0.0));
        assert_ne!(cache_key("m", "p", 0.0), cache_key("m", "p", 0.5));
        assert_ne!(cache_key("ab", "c", 0.0), cache_key("a", "bc", 0.0));
        assert_eq!(cache_key("m", "p", 0.0).len(), 64);
    }

    #[test]
    fn cache_key_fuzz_has_no_collisions() {
        let mut rng = rand::rng();
        let mut seen = HashSet::new();
        let mut triples = HashSet::new();
        for i in 0..10_000 {
            let len = rng.random_range(0..12);
            let prompt: String = (0..len)
                .map(|_| rng.random_range(b'a'..=b'c') as char)
                .collect();
            let model = ["m1", "m2"][i % 2];
            let temp: f64 = [0.0, 0.7][rng.random_range(0..2)];
            if triples.insert((model, prompt.clone(), temp.to_bits())) {
                assert!(seen.insert(cache_key(model, &prompt, temp)));
            }
        }
    }

    #[test]
    fn parses_completion_bodies() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(parse_completion(ok).unwrap(), "hi");
        assert!(matches!(
            parse_completion("{}"),
            Err(ClientError::Protocol(_))
        ));
        assert!(matches!(
            parse_completion("not json"),
            Err(ClientError::Protocol(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = EndpointConfig::new("http://x", "m");
        assert!(c.validate().is_ok());
        c.max_parallel = 0;
        assert!(c.validate().is_err());
        let c = EndpointConfig {
            backoff_base_secs: 0.0,
            ..EndpointConfig::new("http://x", "m")
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn cache_round_trip_uses_sharded_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let key = cache_key("m", "prompt", 0.0);
        assert!(cache.get(&key).is_none());
        cache
            .put_response(key.clone(), "resp", CacheStatus::Ok)
            .unwrap();
        let path = dir.path().join(&key[..2]).join(format!("{key}.json"));
        assert!(path.exists());
        assert_eq!(cache.get_ok(&key).as_deref(), Some("resp"));
        cache
            .put_response(key.clone(), "boom", CacheStatus::Failed)
            .unwrap();
        assert!(cache.get_ok(&key).is_none());
    }
}
