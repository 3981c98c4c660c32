//! Answer text to vectors, repetition pooling, and the per-cell answer set.

mod backend;

pub use backend::{
    content_hash, EmbedRequest, EmbedResponse, EmbeddingBackend, FixtureEmbedder, FixtureEntry,
    HashEmbedder, HttpEmbedder,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ResponseRecord, RunManifest, SystemCell};
use crate::scalar::{norm, Scalar};

/// Default model identifier and its output dimension.
pub const DEFAULT_MODEL_ID: &str = "all-mpnet-base-v2";
pub const DEFAULT_DIMENSION: usize = 768;
/// Alternate models selectable by configuration.
pub const ALTERNATE_MODEL_IDS: [&str; 2] = ["paraphrase-mpnet-base-v2", "e5-large-v2"];

const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding backend transport error: {0}")]
    Transport(String),
    #[error("embedding config error: {0}")]
    Config(String),
    #[error("embedding fixture error: {0}")]
    Fixture(String),
    #[error("cannot pool an empty list of vectors")]
    EmptyPool,
    #[error("pooled mean is the zero vector")]
    DegeneratePool,
    #[error("zero vector cannot be unit-normalized")]
    ZeroVector,
    #[error("vectors disagree: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector<T> {
    pub values: Vec<T>,
    pub model_id: String,
    pub unit_norm: bool,
}

impl<T: Scalar> EmbeddingVector<T> {
    /// Builds a vector, L2-normalizing it when `unit_norm` is set.
    pub fn new(
        values: Vec<T>,
        model_id: impl Into<String>,
        unit_norm: bool,
    ) -> Result<Self, EmbeddingError> {
        let mut v = EmbeddingVector {
            values,
            model_id: model_id.into(),
            unit_norm: false,
        };
        if unit_norm {
            v.normalize()?;
        }
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn normalize(&mut self) -> Result<(), EmbeddingError> {
        let n = norm(&self.values);
        if n == T::zero() || !n.is_finite() {
            return Err(EmbeddingError::ZeroVector);
        }
        for v in &mut self.values {
            *v /= n;
        }
        self.unit_norm = true;
        Ok(())
    }

    /// True when the unit-norm flag is consistent with the stored values.
    pub fn norm_ok(&self) -> bool {
        !self.unit_norm || (norm(&self.values).to_f64_lossy() - 1.0).abs() < UNIT_NORM_TOL
    }
}

/// Componentwise mean of repeated answers, re-normalized when the inputs are unit-norm.
pub fn pool_repetitions<T: Scalar>(
    vectors: &[EmbeddingVector<T>],
) -> Result<EmbeddingVector<T>, EmbeddingError> {
    let first = vectors.first().ok_or(EmbeddingError::EmptyPool)?;
    let d = first.dim();
    for v in vectors {
        if v.dim() != d {
            return Err(EmbeddingError::Mismatch(format!(
                "dimension {} vs {d}",
                v.dim()
            )));
        }
        if v.model_id != first.model_id {
            return Err(EmbeddingError::Mismatch(format!(
                "model {} vs {}",
                v.model_id, first.model_id
            )));
        }
    }
    let count = T::from_count(vectors.len());
    let mean: Vec<T> = (0..d)
        .map(|i| vectors.iter().map(|v| v.values[i]).sum::<T>() / count)
        .collect();
    if mean.iter().all(|&x| x == T::zero()) {
        return Err(EmbeddingError::DegeneratePool);
    }
    let unit = vectors.iter().all(|v| v.unit_norm);
    EmbeddingVector::new(mean, first.model_id.clone(), unit).map_err(|e| match e {
        EmbeddingError::ZeroVector => EmbeddingError::DegeneratePool,
        other => other,
    })
}

/// Embeds texts with one model through a backend, checking dimensions.
pub struct Embedder {
    backend: Box<dyn EmbeddingBackend>,
    pub model_id: String,
    pub dimension: Option<usize>,
    pub unit_norm: bool,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl fmt::Debug for Embedder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Embedder")
            .field("backend", &self.backend.describe())
            .field("model_id", &self.model_id)
            .field("dimension", &self.dimension)
            .field("unit_norm", &self.unit_norm)
            .finish()
    }
}

impl Embedder {
    pub fn new(backend: Box<dyn EmbeddingBackend>, model_id: impl Into<String>) -> Self {
        Embedder {
            backend,
            model_id: model_id.into(),
            dimension: None,
            unit_norm: true,
            batch_size: 64,
            max_in_flight: 4,
        }
    }

    pub fn with_dimension(mut self, d: usize) -> Self {
        self.dimension = Some(d);
        self
    }

    pub fn with_unit_norm(mut self, on: bool) -> Self {
        self.unit_norm = on;
        self
    }

    pub fn with_concurrency(mut self, batch_size: usize, max_in_flight: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self.max_in_flight = max_in_flight.max(1);
        self
    }

    pub fn backend_description(&self) -> String {
        self.backend.describe()
    }

    fn check(&self, raw: Vec<f64>) -> Result<EmbeddingVector<f64>, EmbeddingError> {
        if let Some(d) = self.dimension {
            if raw.len() != d {
                return Err(EmbeddingError::Config(format!(
                    "dimension mismatch: run config expects {d}, backend returned {}",
                    raw.len()
                )));
            }
        }
        if raw.is_empty() {
            return Err(EmbeddingError::Config(
                "backend returned an empty vector".into(),
            ));
        }
        EmbeddingVector::new(raw, self.model_id.clone(), self.unit_norm)
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector<f64>, EmbeddingError> {
        let raw = self
            .backend
            .embed_batch(&self.model_id, &[text.to_string()])?
            .pop()
            .ok_or_else(|| EmbeddingError::Transport("empty response".into()))?;
        self.check(raw)
    }

    /// Embeds the distinct texts of `texts`, batching requests and keeping at
    /// most `max_in_flight` batches outstanding. Output is keyed by text.
    pub fn embed_many<'a>(
        &self,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Result<HashMap<String, EmbeddingVector<f64>>, EmbeddingError> {
        let unique: Vec<String> = texts
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_string)
            .collect();
        let batches: Vec<&[String]> = unique.chunks(self.batch_size).collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.max_in_flight)
            .build()
            .map_err(|e| EmbeddingError::Config(e.to_string()))?;
        let results: Vec<Result<Vec<Vec<f64>>, EmbeddingError>> = pool.install(|| {
            batches
                .par_iter()
                .map(|b| self.backend.embed_batch(&self.model_id, b))
                .collect()
        });
        let mut out = HashMap::with_capacity(unique.len());
        for (batch, res) in batches.iter().zip(results) {
            let vectors = res?;
            if vectors.len() != batch.len() {
                return Err(EmbeddingError::Transport(format!(
                    "expected {} vectors, got {}",
                    batch.len(),
                    vectors.len()
                )));
            }
            for (t, v) in batch.iter().zip(vectors) {
                out.insert(t.clone(), self.check(v)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    Pooled,
    Single,
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingMode::Pooled => "pooled",
            PoolingMode::Single => "single",
        })
    }
}

/// Exactly one vector per answered (system, video, question) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedAnswerSet<T> {
    pub pooling_mode: PoolingMode,
    pub model_id: String,
    pub vectors: BTreeMap<SystemCell, EmbeddingVector<T>>,
    /// Manifest cells with no usable answer.
    pub missing: Vec<SystemCell>,
}

impl<T: Scalar> EmbeddedAnswerSet<T> {
    pub fn get(&self, cell: &SystemCell) -> Option<&EmbeddingVector<T>> {
        self.vectors.get(cell)
    }

    pub fn dimension(&self) -> Option<usize> {
        self.vectors.values().next().map(|v| v.dim())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddedEntry {
    system_id: String,
    video_id: String,
    qid: u8,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddedSetFile {
    pooling_mode: PoolingMode,
    model_id: String,
    unit_norm: bool,
    entries: Vec<EmbeddedEntry>,
    missing: Vec<SystemCell>,
}

impl EmbeddedAnswerSet<f64> {
    pub fn to_json_string(&self) -> String {
        let file = EmbeddedSetFile {
            pooling_mode: self.pooling_mode,
            model_id: self.model_id.clone(),
            unit_norm: self.vectors.values().all(|v| v.unit_norm),
            entries: self
                .vectors
                .iter()
                .map(|(k, v)| EmbeddedEntry {
                    system_id: k.system_id.clone(),
                    video_id: k.video_id.clone(),
                    qid: k.qid,
                    values: v.values.clone(),
                })
                .collect(),
            missing: self.missing.clone(),
        };
        let mut s = serde_json::to_string(&file).expect("embedded set serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(s: &str) -> Result<Self, EmbeddingError> {
        let file: EmbeddedSetFile = serde_json::from_str(s)
            .map_err(|e| EmbeddingError::Fixture(format!("embedded set: {e}")))?;
        let vectors = file
            .entries
            .into_iter()
            .map(|e| {
                (
                    SystemCell {
                        system_id: e.system_id,
                        video_id: e.video_id,
                        qid: e.qid,
                    },
                    EmbeddingVector {
                        values: e.values,
                        model_id: file.model_id.clone(),
                        unit_norm: file.unit_norm,
                    },
                )
            })
            .collect();
        Ok(EmbeddedAnswerSet {
            pooling_mode: file.pooling_mode,
            model_id: file.model_id,
            vectors,
            missing: file.missing,
        })
    }
}

/// Builds the per-cell answer set from curated records.
///
/// Pooled mode averages all non-ignored repetitions of a cell. Single mode
/// takes the lowest-numbered non-ignored repetition (repetition 0 unless it
/// was ignored). Cells without any usable answer are listed in `missing`.
pub fn build_embedded_set(
    curated: &[ResponseRecord],
    manifest: &RunManifest,
    embedder: &Embedder,
    mode: PoolingMode,
) -> Result<EmbeddedAnswerSet<f64>, EmbeddingError> {
    let systems: BTreeSet<&str> = manifest.systems.iter().map(|s| s.id.as_str()).collect();
    let cells: BTreeSet<_> = manifest.cell_indices().into_iter().collect();

    let mut answers: BTreeMap<SystemCell, BTreeMap<u32, &str>> = BTreeMap::new();
    for r in curated {
        let Some(text) = r.analysis_text() else {
            continue;
        };
        let sc = SystemCell {
            system_id: r.system_id.clone(),
            video_id: r.video_id.clone(),
            qid: r.qid,
        };
        if !systems.contains(sc.system_id.as_str()) || !cells.contains(&sc.cell()) {
            continue;
        }
        answers.entry(sc).or_default().insert(r.repetition, text);
    }
    if mode == PoolingMode::Single {
        for reps in answers.values_mut() {
            let first = *reps.keys().next().expect("non-empty");
            reps.retain(|&k, _| k == first);
        }
    }

    let embedded = embedder.embed_many(answers.values().flat_map(|reps| reps.values().copied()))?;

    let mut vectors = BTreeMap::new();
    for (cell, reps) in &answers {
        let vs: Vec<EmbeddingVector<f64>> = reps.values().map(|t| embedded[*t].clone()).collect();
        vectors.insert(cell.clone(), pool_repetitions(&vs)?);
    }
    let mut missing = Vec::new();
    for sys in &manifest.systems {
        for cell in manifest.cell_indices() {
            let sc = SystemCell::new(sys.id.clone(), &cell);
            if !vectors.contains_key(&sc) {
                missing.push(sc);
            }
        }
    }
    Ok(EmbeddedAnswerSet {
        pooling_mode: mode,
        model_id: embedder.model_id.clone(),
        vectors,
        missing,
    })
}
