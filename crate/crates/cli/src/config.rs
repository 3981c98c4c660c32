//! Run configuration loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vqa_align::embedding::{PoolingMode, DEFAULT_DIMENSION, DEFAULT_MODEL_ID};
use vqa_align::metric::MedianGroup;
use vqa_align::model::Block;

use crate::error::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Seeded token-hash vectors; offline, for smoke runs.
    Hash,
    /// Precomputed vectors keyed by (model, text) hash.
    Fixture,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default = "default_model")]
    pub model_id: String,
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "yes")]
    pub unit_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "all_blocks")]
    pub blocks: Vec<u8>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default = "default_range")]
    pub histogram_range: [f64; 2],
    #[serde(default)]
    pub median_group: MedianGroup,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            blocks: all_blocks(),
            histogram_bins: default_bins(),
            histogram_range: default_range(),
            median_group: MedianGroup::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    /// Raw response files, merged by the ingest stage.
    pub responses: Vec<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_pooling")]
    pub pooling_mode: PoolingMode,
    #[serde(default)]
    pub seed: u64,
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_model() -> String {
    DEFAULT_MODEL_ID.to_string()
}
fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}
fn yes() -> bool {
    true
}
fn all_blocks() -> Vec<u8> {
    vec![1, 2, 3]
}
fn default_bins() -> usize {
    20
}
fn default_range() -> [f64; 2] {
    [0.0, 2.0]
}
fn default_pooling() -> PoolingMode {
    PoolingMode::Pooled
}

impl RunConfig {
    /// Parses `path`; relative paths inside are resolved against its
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut cfg.manifest);
        abs(&mut cfg.output_dir);
        cfg.responses.iter_mut().for_each(abs);
        if let Some(f) = cfg.embedding.fixture.as_mut() {
            abs(f);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Validation(m));
        if self.analysis.blocks.is_empty() {
            return bad("analysis.blocks must name at least one block".into());
        }
        for b in &self.analysis.blocks {
            if !(1..=3).contains(b) {
                return bad(format!(
                    "analysis.blocks: {b} is not a block number (1, 2 or 3)"
                ));
            }
        }
        if self.analysis.histogram_bins == 0 {
            return bad("analysis.histogram_bins must be positive".into());
        }
        let [lo, hi] = self.analysis.histogram_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!(
                "analysis.histogram_range [{lo}, {hi}] is not increasing"
            ));
        }
        match self.embedding.backend {
            BackendKind::Fixture if self.embedding.fixture.is_none() => {
                return bad("embedding.backend = \"fixture\" needs embedding.fixture".into())
            }
            BackendKind::Http if self.embedding.endpoint.is_none() => {
                return bad("embedding.backend = \"http\" needs embedding.endpoint".into())
            }
            _ => {}
        }
        if self.embedding.dimension == 0 {
            return bad("embedding.dimension must be positive".into());
        }
        Ok(())
    }

    pub fn blocks(&self) -> Vec<Block> {
        [
            Block::Variable,
            Block::MultipleChoice,
            Block::Counterfactual,
        ]
        .into_iter()
        .filter(|b| self.analysis.blocks.contains(&b.number()))
        .collect()
    }

    /// SHA-256 of the parsed configuration. Independent of key order and
    /// formatting in the source file.
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(
            vqa_align_harness::transport::canonical_json(&v).as_bytes(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: &str = r#"
manifest = "m.json"
responses = ["r.jsonl"]
output_dir = "out"
seed = 3
[embedding]
backend = "hash"
dimension = 32
[analysis]
blocks = [2, 3]
"#;

    const B: &str = r#"
output_dir = "out"
seed = 3
responses = ["r.jsonl"]
manifest = "m.json"
[analysis]
blocks = [2, 3]
[embedding]
dimension = 32
backend = "hash"
"#;

    fn load(text: &str) -> RunConfig {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, text).unwrap();
        let mut c = RunConfig::load(&p).unwrap();
        // Paths differ per temp dir; normalize for comparison.
        c.manifest = "m.json".into();
        c.output_dir = "out".into();
        c.responses = vec!["r.jsonl".into()];
        c
    }

    #[test]
    fn hash_is_stable_under_key_reordering() {
        assert_eq!(load(A).hash(), load(B).hash());
        let mut c = load(A);
        c.seed = 4;
        assert_ne!(c.hash(), load(A).hash());
    }

    #[test]
    fn blocks_map_to_question_blocks() {
        assert_eq!(
            load(A).blocks(),
            vec![Block::MultipleChoice, Block::Counterfactual]
        );
    }

    #[test]
    fn bad_values_are_validation_errors() {
        let mut c = load(A);
        c.analysis.blocks = vec![4];
        assert!(matches!(c.validate(), Err(PipelineError::Validation(_))));
        let mut c = load(A);
        c.embedding.backend = BackendKind::Fixture;
        assert!(matches!(c.validate(), Err(PipelineError::Validation(_))));
    }
}
