//! Embedding backends: deterministic hashing, precomputed fixtures, and an
//! HTTP endpoint speaking `{model_id, texts} -> {vectors}`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;
use std::time::Duration;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EmbeddingError;

/// Produces raw vectors for a batch of texts under a named model.
pub trait EmbeddingBackend: Send + Sync {
    fn embed_batch(
        &self,
        model_id: &str,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, EmbeddingError>;

    /// Identifier recorded in run metadata.
    fn describe(&self) -> String;
}

/// Key of a (model, text) pair in fixture files.
pub fn content_hash(model_id: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[a-z0-9]+").unwrap());

/// Offline backend: every lowercase token maps to a seeded pseudo-random
/// direction and a text embeds as the sum of its token directions, so texts
/// sharing tokens are similar.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dimension: usize,
    pub seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        HashEmbedder { dimension, seed }
    }

    fn token_vector(&self, model_id: &str, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(model_id.as_bytes());
        h.update([0u8]);
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dimension)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect()
    }

    pub fn embed_one(&self, model_id: &str, text: &str) -> Vec<f64> {
        let lower = text.to_lowercase();
        let mut tokens: Vec<&str> = TOKEN.find_iter(&lower).map(|m| m.as_str()).collect();
        if tokens.is_empty() {
            tokens.push("<empty>");
        }
        let mut acc = vec![0.0; self.dimension];
        for t in tokens {
            for (a, v) in acc.iter_mut().zip(self.token_vector(model_id, t)) {
                *a += v;
            }
        }
        acc
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn embed_batch(
        &self,
        model_id: &str,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.embed_one(model_id, t)).collect())
    }

    fn describe(&self) -> String {
        format!("hash(dim={}, seed={})", self.dimension, self.seed)
    }
}

/// One line of `embeddings.fixture.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub hash: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub vector: Vec<f64>,
}

impl FixtureEntry {
    pub fn new(model_id: &str, text: &str, vector: Vec<f64>) -> Self {
        FixtureEntry {
            hash: content_hash(model_id, text),
            model_id: model_id.to_string(),
            text: Some(text.to_string()),
            vector,
        }
    }
}

/// Precomputed vectors keyed by content hash.
#[derive(Debug, Clone, Default)]
pub struct FixtureEmbedder {
    entries: HashMap<String, Vec<f64>>,
}

impl FixtureEmbedder {
    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        FixtureEmbedder {
            entries: entries.into_iter().map(|e| (e.hash, e.vector)).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| EmbeddingError::Fixture(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let e: FixtureEntry = serde_json::from_str(line).map_err(|e| {
                EmbeddingError::Fixture(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
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

impl EmbeddingBackend for FixtureEmbedder {
    fn embed_batch(
        &self,
        model_id: &str,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        texts
            .iter()
            .map(|t| {
                let key = content_hash(model_id, t);
                self.entries.get(&key).cloned().ok_or_else(|| {
                    EmbeddingError::Fixture(format!(
                        "no fixture vector for {model_id} text hash {key}"
                    ))
                })
            })
            .collect()
    }

    fn describe(&self) -> String {
        format!("fixture({} entries)", self.entries.len())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model_id: String,
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

/// Client for an embedding service at `endpoint`.
pub struct HttpEmbedder {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>) -> Result<Self, EmbeddingError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        Ok(HttpEmbedder {
            endpoint: endpoint.into(),
            client,
        })
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn embed_batch(
        &self,
        model_id: &str,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let req = EmbedRequest {
            model_id: model_id.to_string(),
            texts: texts.to_vec(),
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&req)
            .send()
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbeddingError::Transport(format!(
                "{} returned {}",
                self.endpoint,
                resp.status()
            )));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbeddingError::Transport(format!(
                "expected {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        Ok(body.vectors)
    }

    fn describe(&self) -> String {
        format!("http({})", self.endpoint)
    }
}
