//! Request transport: live HTTP, fixture replay, and recording.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;
use vqa_align::model::Provider;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network: {0}")]
    Network(String),
    #[error("no replay entry for request {0}")]
    ReplayMiss(String),
    #[error("transport configuration: {0}")]
    Config(String),
    #[error("unexpected response shape: {0}")]
    Decode(String),
    #[error("fixture i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl TransportError {
    /// Whether another attempt can change the outcome.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Http { status, .. } => {
                *status == 408 || *status == 429 || *status >= 500
            }
            TransportError::Network(_) | TransportError::Decode(_) => true,
            TransportError::ReplayMiss(_) | TransportError::Config(_) | TransportError::Io(_) => {
                false
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderRequest {
    pub provider: Provider,
    pub body: Value,
    pub repetition: u32,
}

impl ProviderRequest {
    pub fn key(&self) -> String {
        request_key(&self.body, self.repetition)
    }
}

/// JSON with object keys sorted at every level, no whitespace.
pub fn canonical_json(v: &Value) -> String {
    fn write(v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&Value::String(k.clone()).to_string());
                    out.push(':');
                    write(&map[k], out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, x) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(x, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut out = String::new();
    write(v, &mut out);
    out
}

/// Hex SHA-256 of the canonical request document and repetition index.
pub fn request_key(body: &Value, repetition: u32) -> String {
    let mut h = Sha256::new();
    h.update(canonical_json(body).as_bytes());
    h.update(b"\0");
    h.update(repetition.to_string().as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reply {
    pub text: String,
    pub timestamp: String,
}

pub trait Transport: Send + Sync {
    fn send(&self, req: &ProviderRequest) -> Result<Reply, TransportError>;
}

impl<T: Transport + ?Sized> Transport for &T {
    fn send(&self, req: &ProviderRequest) -> Result<Reply, TransportError> {
        (**self).send(req)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&self, req: &ProviderRequest) -> Result<Reply, TransportError> {
        (**self).send(req)
    }
}

/// One line of a replay fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub key: String,
    pub provider: Provider,
    pub repetition: u32,
    pub text: String,
    pub timestamp: String,
}

#[derive(Debug, Default)]
pub struct ReplayTransport {
    entries: HashMap<String, ReplayEntry>,
}

impl ReplayTransport {
    pub fn from_entries(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        ReplayTransport {
            entries: entries.into_iter().map(|e| (e.key.clone(), e)).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TransportError> {
        let text = fs::read_to_string(path.as_ref())?;
        let mut entries = Vec::new();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let e: ReplayEntry = serde_json::from_str(line)
                .map_err(|e| TransportError::Config(format!("fixture line {}: {e}", n + 1)))?;
            entries.push(e);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Transport for ReplayTransport {
    fn send(&self, req: &ProviderRequest) -> Result<Reply, TransportError> {
        let key = req.key();
        let e = self
            .entries
            .get(&key)
            .ok_or(TransportError::ReplayMiss(key))?;
        Ok(Reply {
            text: e.text.clone(),
            timestamp: e.timestamp.clone(),
        })
    }
}

/// Forwards to `inner` and appends each successful reply to a fixture file.
pub struct RecordingTransport<T> {
    inner: T,
    out: Mutex<File>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, fixture: impl AsRef<Path>) -> Result<Self, TransportError> {
        let out = OpenOptions::new().create(true).append(true).open(fixture)?;
        Ok(RecordingTransport {
            inner,
            out: Mutex::new(out),
        })
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, req: &ProviderRequest) -> Result<Reply, TransportError> {
        let reply = self.inner.send(req)?;
        let entry = ReplayEntry {
            key: req.key(),
            provider: req.provider,
            repetition: req.repetition,
            text: reply.text.clone(),
            timestamp: reply.timestamp.clone(),
        };
        let line = serde_json::to_string(&entry).expect("entry serializes");
        let mut f = self.out.lock().expect("fixture lock");
        writeln!(f, "{line}")?;
        f.flush()?;
        Ok(reply)
    }
}

/// Environment variable prefix for a provider, e.g. `VQA_ALIGN_GENERIC_HTTP`.
pub fn env_prefix(provider: Provider) -> String {
    format!(
        "VQA_ALIGN_{}",
        provider.as_str().to_ascii_uppercase().replace('-', "_")
    )
}

/// HTTP transport. Endpoint and bearer key come from `<prefix>_URL` and
/// `<prefix>_API_KEY`.
pub struct LiveTransport {
    client: reqwest::blocking::Client,
    provider: Provider,
    url: String,
    api_key: Option<String>,
}

impl LiveTransport {
    pub fn from_env(provider: Provider) -> Result<Self, TransportError> {
        let prefix = env_prefix(provider);
        let url = std::env::var(format!("{prefix}_URL"))
            .map_err(|_| TransportError::Config(format!("{prefix}_URL is not set")))?;
        let api_key = std::env::var(format!("{prefix}_API_KEY")).ok();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| TransportError::Config(e.to_string()))?;
        Ok(LiveTransport {
            client,
            provider,
            url,
            api_key,
        })
    }
}

impl Transport for LiveTransport {
    fn send(&self, req: &ProviderRequest) -> Result<Reply, TransportError> {
        if req.provider != self.provider {
            return Err(TransportError::Config(format!(
                "transport is bound to {}, request is for {}",
                self.provider, req.provider
            )));
        }
        let mut call = self.client.post(&self.url).json(&req.body);
        if let Some(k) = &self.api_key {
            call = call.bearer_auth(k);
        }
        let resp = call
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Http {
                status: status.as_u16(),
                body,
            });
        }
        let v: Value =
            serde_json::from_str(&body).map_err(|e| TransportError::Decode(e.to_string()))?;
        Ok(Reply {
            text: extract_text(req.provider, &v)?,
            timestamp: crate::now_timestamp(),
        })
    }
}

/// Pulls the generated text out of a provider response body.
pub fn extract_text(provider: Provider, v: &Value) -> Result<String, TransportError> {
    let missing = || TransportError::Decode(format!("{provider}: no text in response"));
    match provider {
        Provider::Deepseek | Provider::Pixtral | Provider::GenericHttp => v["choices"][0]
            ["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(missing),
        Provider::Gemini => {
            let parts = v["candidates"][0]["content"]["parts"]
                .as_array()
                .ok_or_else(missing)?;
            Ok(parts.iter().filter_map(|p| p["text"].as_str()).collect())
        }
        Provider::Llama => match &v["predictions"][0] {
            Value::String(s) => Ok(s.clone()),
            p => p["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(missing),
        },
        Provider::Cogvlm | Provider::Qwen2 => match &v["output"] {
            Value::String(s) => Ok(s.clone()),
            Value::Array(chunks) => Ok(chunks.iter().filter_map(Value::as_str).collect()),
            _ => Err(missing()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn key_ignores_object_key_order() {
        let a: Value = serde_json::from_str(r#"{"b":1,"a":{"y":[1,2],"x":"s"}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a":{"x":"s","y":[1,2]},"b":1}"#).unwrap();
        assert_eq!(canonical_json(&a), r#"{"a":{"x":"s","y":[1,2]},"b":1}"#);
        assert_eq!(request_key(&a, 0), request_key(&b, 0));
        assert_ne!(request_key(&a, 0), request_key(&a, 1));
    }

    #[test]
    fn record_then_replay_round_trips() {
        struct Echo;
        impl Transport for Echo {
            fn send(&self, req: &ProviderRequest) -> Result<Reply, TransportError> {
                Ok(Reply {
                    text: format!("echo {}", req.repetition),
                    timestamp: "2025-01-01T00:00:00Z".into(),
                })
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.jsonl");
        let rec = RecordingTransport::new(Echo, &path).unwrap();
        let reqs: Vec<ProviderRequest> = (0..3)
            .map(|r| ProviderRequest {
                provider: Provider::Gemini,
                body: json!({"q": "x"}),
                repetition: r,
            })
            .collect();
        let live: Vec<Reply> = reqs.iter().map(|r| rec.send(r).unwrap()).collect();
        let replay = ReplayTransport::load(&path).unwrap();
        assert_eq!(replay.len(), 3);
        let again: Vec<Reply> = reqs.iter().map(|r| replay.send(r).unwrap()).collect();
        assert_eq!(live, again);
        let miss = ProviderRequest {
            provider: Provider::Gemini,
            body: json!({"q": "y"}),
            repetition: 0,
        };
        assert!(matches!(
            replay.send(&miss),
            Err(TransportError::ReplayMiss(_))
        ));
    }

    #[test]
    fn text_extraction_per_provider() {
        let chat = json!({"choices": [{"message": {"content": "hi"}}]});
        assert_eq!(extract_text(Provider::Pixtral, &chat).unwrap(), "hi");
        let gem = json!({"candidates": [{"content": {"parts": [{"text": "a"}, {"text": "b"}]}}]});
        assert_eq!(extract_text(Provider::Gemini, &gem).unwrap(), "ab");
        let rep = json!({"output": ["x", "y"]});
        assert_eq!(extract_text(Provider::Cogvlm, &rep).unwrap(), "xy");
        let llama = json!({"predictions": ["z"]});
        assert_eq!(extract_text(Provider::Llama, &llama).unwrap(), "z");
        assert!(extract_text(Provider::Deepseek, &json!({})).is_err());
    }

    #[test]
    fn env_prefix_is_shell_safe() {
        assert_eq!(env_prefix(Provider::GenericHttp), "VQA_ALIGN_GENERIC_HTTP");
    }
}
