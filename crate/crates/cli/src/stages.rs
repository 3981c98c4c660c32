//! The seven pipeline stages over a file-based stage store.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use serde_json::json;
use vqa_align::curation::{curate, CurationStats, RULES_VERSION};
use vqa_align::dimred::pca_for_block;
use vqa_align::embedding::{
    build_embedded_set, EmbeddedAnswerSet, Embedder, EmbeddingBackend, FixtureEmbedder,
    HashEmbedder, HttpEmbedder,
};
use vqa_align::metric::{distance_to_median, summarize_distances, BinEdges, GroupBy};
use vqa_align::model::{
    parse_responses, read_responses, responses_to_jsonl, validate_responses, RunManifest,
};
use vqa_align::rsa::{analyze_scope, group_means, heatmap_order, BlockScope};

use crate::config::{BackendKind, RunConfig};
use crate::error::PipelineError;
use crate::report::build_report;
use crate::store::{sha256_hex, InputHasher, StageStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Curate,
    Embed,
    Rsa,
    Metric,
    Pca,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Curate,
        Stage::Embed,
        Stage::Rsa,
        Stage::Metric,
        Stage::Pca,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Curate => "curate",
            Stage::Embed => "embed",
            Stage::Rsa => "rsa",
            Stage::Metric => "metric",
            Stage::Pca => "pca",
            Stage::Report => "report",
        }
    }

    /// Bumped whenever a stage's output format or semantics change.
    pub fn version(self) -> &'static str {
        match self {
            Stage::Curate => RULES_VERSION,
            _ => "1",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Curate => &[Stage::Ingest],
            Stage::Embed => &[Stage::Ingest, Stage::Curate],
            Stage::Rsa | Stage::Metric | Stage::Pca => &[Stage::Ingest, Stage::Embed],
            Stage::Report => &[
                Stage::Ingest,
                Stage::Curate,
                Stage::Rsa,
                Stage::Metric,
                Stage::Pca,
            ],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub ran: bool,
    pub files_written: usize,
}

pub const MANIFEST: &str = "ingest/manifest.json";
pub const RAW: &str = "ingest/responses.raw.jsonl";
pub const CURATED: &str = "curate/responses.curated.jsonl";
pub const CURATION_STATS: &str = "curate/curation_stats.json";
pub const EMBEDDINGS: &str = "embed/embeddings.json";
pub const RSA_SUMMARY: &str = "rsa/rsa_summary.json";
pub const DISTANCES: &str = "metric/distances.csv";
pub const DISTANCE_SUMMARY: &str = "metric/distance_summary.json";
pub const PCA_SUMMARY: &str = "pca/pca_summary.json";
pub const REPORT: &str = "report/report.json";
pub const RUN_METADATA: &str = "run_metadata.json";

pub fn scope_file(scope: BlockScope, ext: &str) -> String {
    format!("rsa/similarity_{}.{ext}", scope.as_str())
}

pub fn pca_file(block: vqa_align::model::Block) -> String {
    format!("pca/pca_{}.csv", block.as_str())
}

pub struct Pipeline {
    pub config: RunConfig,
    pub store: StageStore,
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>, PipelineError> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

impl Pipeline {
    pub fn open(config: RunConfig) -> Result<Self, PipelineError> {
        let store = StageStore::open(&config.output_dir)?;
        Ok(Pipeline { config, store })
    }

    fn require(&self, stage: Stage) -> Result<String, PipelineError> {
        let mut h = InputHasher::default();
        h.add("stage", stage.name().as_bytes())
            .add("version", stage.version().as_bytes());
        for &up in stage.upstream() {
            let stamp =
                self.store
                    .valid_stamp(up.name())
                    .ok_or_else(|| PipelineError::Dependency {
                        stage: stage.name(),
                        missing: up.name(),
                        detail: format!(
                            "no complete `{up}` artifacts under {}",
                            self.store.root.display()
                        ),
                    })?;
            for (file, hash) in &stamp.outputs {
                h.add(file, hash.as_bytes());
            }
        }
        Ok(h.finish())
    }

    pub fn manifest(&self) -> Result<RunManifest, PipelineError> {
        Ok(RunManifest::from_json_str(
            &self.store.read_string(MANIFEST)?,
        )?)
    }

    fn embedded(&self) -> Result<EmbeddedAnswerSet<f64>, PipelineError> {
        Ok(EmbeddedAnswerSet::from_json_str(
            &self.store.read_string(EMBEDDINGS)?,
        )?)
    }

    pub fn run(&mut self, stage: Stage) -> Result<StageOutcome, PipelineError> {
        let before = self.store.written.len();
        let mut input = self.require(stage)?;
        let cfg_part = self.stage_config(stage)?;
        input = sha256_hex(format!("{input}\0{cfg_part}").as_bytes());
        if self.store.is_current(stage.name(), stage.version(), &input) {
            tracing::info!(stage = stage.name(), "up to date");
            return Ok(StageOutcome {
                stage: stage.name(),
                ran: false,
                files_written: 0,
            });
        }
        tracing::info!(stage = stage.name(), "running");
        let outputs = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Curate => self.curate()?,
            Stage::Embed => self.embed()?,
            Stage::Rsa => self.rsa()?,
            Stage::Metric => self.metric()?,
            Stage::Pca => self.pca()?,
            Stage::Report => self.report()?,
        };
        self.store
            .commit(stage.name(), stage.version(), &input, outputs)?;
        self.write_metadata()?;
        Ok(StageOutcome {
            stage: stage.name(),
            ran: true,
            files_written: self.store.written.len() - before,
        })
    }

    pub fn run_all(&mut self) -> Result<Vec<StageOutcome>, PipelineError> {
        Stage::ALL.iter().map(|&s| self.run(s)).collect()
    }

    /// The part of the configuration (and external inputs) a stage reads.
    fn stage_config(&self, stage: Stage) -> Result<String, PipelineError> {
        let c = &self.config;
        Ok(match stage {
            Stage::Ingest => {
                let mut h = InputHasher::default();
                let read =
                    |p: &std::path::Path| std::fs::read(p).map_err(|e| PipelineError::io(p, e));
                h.add("manifest", &read(&c.manifest)?);
                for (i, r) in c.responses.iter().enumerate() {
                    h.add(&format!("responses{i}"), &read(r)?);
                }
                h.finish()
            }
            Stage::Curate => String::new(),
            Stage::Embed => {
                let mut v =
                    json!({"embedding": c.embedding, "pooling": c.pooling_mode, "seed": c.seed});
                if let Some(f) = &c.embedding.fixture {
                    let bytes = std::fs::read(f).map_err(|e| PipelineError::io(f, e))?;
                    v["fixture_hash"] = json!(sha256_hex(&bytes));
                    v["embedding"]["fixture"] = json!(null);
                }
                v.to_string()
            }
            Stage::Rsa | Stage::Pca => json!({"blocks": c.analysis.blocks}).to_string(),
            Stage::Metric | Stage::Report => serde_json::to_string(&c.analysis)?,
        })
    }

    fn emit(
        &mut self,
        out: &mut BTreeMap<String, String>,
        rel: &str,
        bytes: &[u8],
    ) -> Result<(), PipelineError> {
        let h = self.store.write(rel, bytes)?;
        out.insert(rel.to_string(), h);
        Ok(())
    }

    fn ingest(&mut self) -> Result<BTreeMap<String, String>, PipelineError> {
        let manifest = vqa_align::model::load_run_manifest(&self.config.manifest)?;
        let mut records = Vec::new();
        for p in &self.config.responses {
            records.extend(read_responses(p)?);
        }
        let report = validate_responses(&records, &manifest);
        if !(report.duplicates.is_empty() && report.unknown.is_empty() && report.invalid.is_empty())
        {
            return Err(PipelineError::Validation(format!(
                "responses: {} duplicate keys, {} unknown references, {} invalid records; first: {}",
                report.duplicates.len(),
                report.unknown.len(),
                report.invalid.len(),
                report
                    .invalid
                    .first()
                    .map(|i| format!("record {}: {}", i.record, i.reason))
                    .or_else(|| report.unknown.first().map(|u| format!("record {}: unknown {:?} `{}`", u.record, u.field, u.value)))
                    .or_else(|| report.duplicates.first().map(|d| format!("duplicate {d:?}")))
                    .unwrap_or_default()
            )));
        }
        records.sort_by_key(|r| r.key());
        let mut out = BTreeMap::new();
        self.emit(&mut out, MANIFEST, manifest.to_json_string().as_bytes())?;
        self.emit(&mut out, RAW, responses_to_jsonl(&records).as_bytes())?;
        let summary = json!({
            "records": records.len(),
            "missing_cells": report.missing,
        });
        self.emit(&mut out, "ingest/validation.json", &pretty(&summary)?)?;
        Ok(out)
    }

    fn curate(&mut self) -> Result<BTreeMap<String, String>, PipelineError> {
        let manifest = self.manifest()?;
        let raw = parse_responses(&self.store.read_string(RAW)?)?;
        let (curated, stats) = curate(&raw, &manifest);
        let totals = stats.vlm_totals(&manifest);
        let mut out = BTreeMap::new();
        self.emit(&mut out, CURATED, responses_to_jsonl(&curated).as_bytes())?;
        self.emit(
            &mut out,
            CURATION_STATS,
            &pretty(&json!({"stats": stats, "vlm_totals": totals}))?,
        )?;
        Ok(out)
    }

    pub fn embedder(&self) -> Result<Embedder, PipelineError> {
        let e = &self.config.embedding;
        let backend: Box<dyn EmbeddingBackend> = match e.backend {
            BackendKind::Hash => Box::new(HashEmbedder::new(e.dimension, self.config.seed)),
            BackendKind::Fixture => Box::new(FixtureEmbedder::load(
                e.fixture.as_ref().expect("validated"),
            )?),
            BackendKind::Http => {
                Box::new(HttpEmbedder::new(e.endpoint.clone().expect("validated"))?)
            }
        };
        Ok(Embedder::new(backend, e.model_id.clone())
            .with_dimension(e.dimension)
            .with_unit_norm(e.unit_norm))
    }

    fn embed(&mut self) -> Result<BTreeMap<String, String>, PipelineError> {
        let manifest = self.manifest()?;
        let curated = parse_responses(&self.store.read_string(CURATED)?)?;
        let set = build_embedded_set(
            &curated,
            &manifest,
            &self.embedder()?,
            self.config.pooling_mode,
        )?;
        let mut out = BTreeMap::new();
        self.emit(&mut out, EMBEDDINGS, set.to_json_string().as_bytes())?;
        Ok(out)
    }

    fn scopes(&self) -> Vec<BlockScope> {
        let mut s = vec![BlockScope::All];
        s.extend(self.config.blocks().into_iter().map(BlockScope::from));
        s
    }

    fn rsa(&mut self) -> Result<BTreeMap<String, String>, PipelineError> {
        let manifest = self.manifest()?;
        let set = self.embedded()?;
        let present: BTreeSet<&str> = set.vectors.keys().map(|k| k.system_id.as_str()).collect();
        let (systems, absent): (Vec<String>, Vec<String>) = heatmap_order(&manifest)
            .into_iter()
            .partition(|s| present.contains(s.as_str()));
        let kinds = manifest.system_kinds();
        let mut out = BTreeMap::new();
        let mut summary = BTreeMap::new();
        for scope in self.scopes() {
            let a = analyze_scope(&set, &manifest, &systems, scope)?;
            a.similarity.check_invariants()?;
            self.emit(
                &mut out,
                &scope_file(scope, "csv"),
                a.similarity.to_csv().as_bytes(),
            )?;
            self.emit(
                &mut out,
                &scope_file(scope, "json"),
                &pretty(&a.similarity)?,
            )?;
            let shared = a.gramians.first().map_or(0, |g| g.indices.len());
            summary.insert(
                scope.as_str(),
                json!({
                    "shared_cells": shared,
                    "dropped_cells": a.dropped,
                    "group_means": group_means(&a.similarity, &kinds),
                    "invariants_checked": true,
                }),
            );
        }
        self.emit(
            &mut out,
            RSA_SUMMARY,
            &pretty(
                &json!({"systems": systems, "systems_without_answers": absent, "scopes": summary}),
            )?,
        )?;
        Ok(out)
    }

    fn edges(&self) -> Result<BinEdges, PipelineError> {
        let [lo, hi] = self.config.analysis.histogram_range;
        Ok(BinEdges::uniform(
            lo,
            hi,
            self.config.analysis.histogram_bins,
        )?)
    }

    fn metric(&mut self) -> Result<BTreeMap<String, String>, PipelineError> {
        let manifest = self.manifest()?;
        let set = self.embedded()?;
        let mut table = distance_to_median(&set, &manifest, self.config.analysis.median_group)?;
        let blocks = self.config.blocks();
        table.rows.retain(|r| blocks.contains(&r.block));
        let edges = self.edges()?;
        let summary = json!({
            "median_group": table.median_group,
            "skipped": table.skipped,
            "by_kind_and_block": summarize_distances(&table, GroupBy::KindAndBlock, &edges)?,
            "by_block": summarize_distances(&table, GroupBy::Block, &edges)?,
        });
        let mut out = BTreeMap::new();
        self.emit(&mut out, DISTANCES, table.to_csv().as_bytes())?;
        self.emit(&mut out, DISTANCE_SUMMARY, &pretty(&summary)?)?;
        Ok(out)
    }

    fn pca(&mut self) -> Result<BTreeMap<String, String>, PipelineError> {
        let manifest = self.manifest()?;
        let set = self.embedded()?;
        let mut out = BTreeMap::new();
        let mut summary = BTreeMap::new();
        for block in self.config.blocks() {
            let p = pca_for_block(&set, block)?;
            self.emit(&mut out, &pca_file(block), p.to_csv(&manifest).as_bytes())?;
            summary.insert(
                block.as_str(),
                json!({
                    "points": p.coords.len(),
                    "explained_variance_ratio": p.explained_variance_ratio,
                    "explained_sum": p.explained_sum(),
                    "rank_deficient": p.rank_deficient,
                }),
            );
        }
        self.emit(&mut out, PCA_SUMMARY, &pretty(&summary)?)?;
        Ok(out)
    }

    fn report(&mut self) -> Result<BTreeMap<String, String>, PipelineError> {
        let files = build_report(self)?;
        let mut out = BTreeMap::new();
        for (rel, bytes) in files {
            self.emit(&mut out, &rel, &bytes)?;
        }
        Ok(out)
    }

    pub fn curation_stats(&self) -> Result<CurationStats, PipelineError> {
        let v: serde_json::Value = serde_json::from_str(&self.store.read_string(CURATION_STATS)?)?;
        Ok(serde_json::from_value(v["stats"].clone())?)
    }

    fn write_metadata(&mut self) -> Result<(), PipelineError> {
        let meta = crate::metadata::RunMetadata::collect(self)?;
        let bytes = pretty(&meta)?;
        self.store.write(RUN_METADATA, &bytes)?;
        Ok(())
    }
}
