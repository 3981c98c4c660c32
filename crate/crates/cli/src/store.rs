//! File-based stage store. Each stage records a stamp with the hash of its
//! inputs and of every file it wrote; a stage whose stamp still matches is
//! skipped, and files are only rewritten when their bytes change.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::PipelineError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub version: String,
    pub input_hash: String,
    /// Output path relative to the run directory, to content hash.
    pub outputs: BTreeMap<String, String>,
    pub completed_at: String,
}

#[derive(Debug)]
pub struct StageStore {
    pub root: PathBuf,
    /// Files actually written since the store was opened.
    pub written: Vec<PathBuf>,
}

/// Accumulates a stage's input fingerprint.
#[derive(Debug, Default)]
pub struct InputHasher(Sha256);

impl InputHasher {
    pub fn add(&mut self, label: &str, bytes: &[u8]) -> &mut Self {
        self.0.update((label.len() as u64).to_le_bytes());
        self.0.update(label.as_bytes());
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

impl StageStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let root = root.into();
        fs::create_dir_all(root.join(".stamps")).map_err(|e| PipelineError::io(&root, e))?;
        Ok(StageStore {
            root,
            written: Vec::new(),
        })
    }

    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.root.join(".stamps").join(format!("{stage}.json"))
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn stamp(&self, stage: &str) -> Option<Stamp> {
        let text = fs::read_to_string(self.stamp_path(stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Stamp of a stage whose recorded outputs are all present and intact.
    pub fn valid_stamp(&self, stage: &str) -> Option<Stamp> {
        let s = self.stamp(stage)?;
        let intact = s.outputs.iter().all(|(rel, hash)| {
            fs::read(self.path(rel))
                .map(|b| sha256_hex(&b) == *hash)
                .unwrap_or(false)
        });
        intact.then_some(s)
    }

    pub fn is_current(&self, stage: &str, version: &str, input_hash: &str) -> bool {
        self.valid_stamp(stage)
            .is_some_and(|s| s.version == version && s.input_hash == input_hash)
    }

    pub fn read(&self, rel: &str) -> Result<Vec<u8>, PipelineError> {
        let p = self.path(rel);
        fs::read(&p).map_err(|e| PipelineError::io(&p, e))
    }

    pub fn read_string(&self, rel: &str) -> Result<String, PipelineError> {
        String::from_utf8(self.read(rel)?).map_err(|e| PipelineError::Other(format!("{rel}: {e}")))
    }

    /// Writes `bytes` unless the file already holds exactly them. Returns the
    /// content hash.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<String, PipelineError> {
        let p = self.path(rel);
        write_if_changed(&p, bytes, &mut self.written)?;
        Ok(sha256_hex(bytes))
    }

    pub fn commit(
        &mut self,
        stage: &str,
        version: &str,
        input_hash: &str,
        outputs: BTreeMap<String, String>,
    ) -> Result<(), PipelineError> {
        if let Some(old) = self.stamp(stage) {
            if old.version == version && old.input_hash == input_hash && old.outputs == outputs {
                return Ok(());
            }
        }
        let stamp = Stamp {
            stage: stage.to_string(),
            version: version.to_string(),
            input_hash: input_hash.to_string(),
            outputs,
            completed_at: vqa_align_harness::now_timestamp(),
        };
        let text = serde_json::to_string_pretty(&stamp)? + "\n";
        let p = self.stamp_path(stage);
        write_if_changed(&p, text.as_bytes(), &mut self.written)
    }
}

pub fn write_if_changed(
    p: &Path,
    bytes: &[u8],
    log: &mut Vec<PathBuf>,
) -> Result<(), PipelineError> {
    if fs::read(p).is_ok_and(|old| old == bytes) {
        return Ok(());
    }
    if let Some(dir) = p.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    fs::write(p, bytes).map_err(|e| PipelineError::io(p, e))?;
    log.push(p.to_path_buf());
    Ok(())
}
