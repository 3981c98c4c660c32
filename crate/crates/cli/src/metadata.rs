//! Run metadata: configuration hash, stage versions and the analysis
//! choices in effect.

use std::collections::BTreeMap;

use serde::Serialize;
use vqa_align::curation::RULES_VERSION;
use vqa_align::metric::MedianGroup;
use vqa_align::model::SystemKind;
use vqa_align::profiles::{max_tokens_is_unpublished, UNPUBLISHED_MAX_TOKENS};

use crate::error::PipelineError;
use crate::stages::{Pipeline, Stage};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decisions {
    pub normalization: String,
    pub pooling: String,
    pub median: String,
    pub median_group: MedianGroup,
    pub triangle: String,
    pub missing_cells: String,
    pub curation_rules: String,
    pub pca: String,
    /// Systems whose token limit is a default rather than a published value.
    pub unpublished_max_tokens: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub stage_versions: BTreeMap<&'static str, &'static str>,
    pub decisions: Decisions,
    /// Completion time of each finished stage.
    pub completed: BTreeMap<String, String>,
}

impl RunMetadata {
    pub fn collect(p: &Pipeline) -> Result<Self, PipelineError> {
        let c = &p.config;
        let unpublished = p
            .manifest()
            .map(|m| {
                m.systems
                    .iter()
                    .filter(|s| s.kind == SystemKind::Vlm)
                    .filter_map(|s| s.provider_config.as_ref().map(|pc| (s, pc)))
                    .filter(|(_, pc)| {
                        max_tokens_is_unpublished(pc.provider)
                            && pc.max_tokens == UNPUBLISHED_MAX_TOKENS
                    })
                    .map(|(s, pc)| (s.id.clone(), pc.max_tokens))
                    .collect()
            })
            .unwrap_or_default();
        let decisions = Decisions {
            normalization: if c.embedding.unit_norm {
                "unit L2 norm (cosine Gramian)".into()
            } else {
                "raw vectors (dot-product Gramian)".into()
            },
            pooling: c.pooling_mode.to_string(),
            median: "componentwise; even counts average the two middle values; not renormalized"
                .into(),
            median_group: c.analysis.median_group,
            triangle: "strict upper triangle, diagonal excluded".into(),
            missing_cells: "a cell missing for any system is dropped for all systems".into(),
            curation_rules: RULES_VERSION.into(),
            pca: "mean-centered, thin SVD, largest-magnitude loading positive".into(),
            unpublished_max_tokens: unpublished,
        };
        Ok(RunMetadata {
            config_hash: c.hash(),
            stage_versions: Stage::ALL.iter().map(|s| (s.name(), s.version())).collect(),
            decisions,
            completed: Stage::ALL
                .iter()
                .filter_map(|s| {
                    p.store
                        .stamp(s.name())
                        .map(|st| (s.name().to_string(), st.completed_at))
                })
                .collect(),
        })
    }
}
