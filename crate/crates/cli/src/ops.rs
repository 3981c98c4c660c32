//! Provider harness, capacity probe and question generation commands.

use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use serde_json::json;
use vqa_align::model::{load_run_manifest, read_responses, Provider, RunManifest};
use vqa_align::questions::{
    build_oracle_prompt, load_metadata_dir, merge_into_manifest, parse_oracle_output,
};
use vqa_align_harness::capacity::{
    generate_case, opaque_file_name, run_capacity, CannedTransport, CapacityReport, GradingLexicon,
    ProbeSettings,
};
use vqa_align_harness::frames::{DirFrameSource, FrameSource, SyntheticFrameSource};
use vqa_align_harness::jobs::{build_jobs, run_jobs, PromptConfig, RunOptions};
use vqa_align_harness::transport::{
    LiveTransport, ProviderRequest, RecordingTransport, ReplayTransport, Transport,
};

use crate::error::PipelineError;
use crate::store::write_if_changed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TransportMode {
    Live,
    Replay,
    Record,
}

pub fn parse_provider(name: &str) -> Result<Provider, PipelineError> {
    Provider::parse(name)
        .ok_or_else(|| PipelineError::Validation(format!("unknown provider `{name}`")))
}

pub fn make_transport(
    mode: TransportMode,
    provider: Provider,
    fixture: Option<&Path>,
) -> Result<Box<dyn Transport>, PipelineError> {
    let need = || {
        fixture.ok_or_else(|| {
            PipelineError::Validation("--fixture is required for replay and record".into())
        })
    };
    Ok(match mode {
        TransportMode::Live => Box::new(LiveTransport::from_env(provider)?),
        TransportMode::Replay => {
            let f = need()?;
            Box::new(
                ReplayTransport::load(f).map_err(|e| PipelineError::Dependency {
                    stage: "harness",
                    missing: "replay fixture",
                    detail: format!("{}: {e}", f.display()),
                })?,
            )
        }
        TransportMode::Record => Box::new(RecordingTransport::new(
            LiveTransport::from_env(provider)?,
            need()?,
        )?),
    })
}

pub struct HarnessArgs {
    pub manifest: PathBuf,
    pub provider: Provider,
    pub transport: Box<dyn Transport>,
    /// Frame directory; synthetic placeholder frames when absent.
    pub frames: Option<PathBuf>,
    pub out: PathBuf,
    pub prompts: PromptConfig,
    pub max_in_flight: usize,
    pub min_interval: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HarnessSummary {
    pub systems: Vec<String>,
    pub already_stored: usize,
    pub appended: usize,
    pub errors: usize,
    pub retried: usize,
}

fn append_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    if rows.is_empty() {
        return Ok(());
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| PipelineError::io(path, e))?;
    for r in rows {
        writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| PipelineError::io(path, e))?;
    }
    Ok(())
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("responses");
    out.with_file_name(format!("{stem}.{suffix}.jsonl"))
}

/// Queries every system of `provider` in the manifest. Repetitions already
/// present in `out` are skipped, so the store only ever grows.
pub fn harness_run(args: HarnessArgs) -> Result<HarnessSummary, PipelineError> {
    let manifest = load_run_manifest(&args.manifest)?;
    manifest.validate()?;
    let systems: Vec<String> = manifest
        .systems
        .iter()
        .filter(|s| {
            s.provider_config
                .as_ref()
                .is_some_and(|c| c.provider == args.provider)
        })
        .map(|s| s.id.clone())
        .collect();
    if systems.is_empty() {
        return Err(PipelineError::Validation(format!(
            "manifest has no system using provider `{}`",
            args.provider
        )));
    }
    let source: Box<dyn FrameSource> = match &args.frames {
        Some(dir) => Box::new(DirFrameSource::new(dir)),
        None => Box::new(SyntheticFrameSource { size: 16 }),
    };
    let existing = if args.out.exists() {
        read_responses(&args.out)?
    } else {
        Vec::new()
    };
    let skip: HashSet<_> = existing.iter().map(|r| r.key()).collect();
    let opts = RunOptions {
        max_in_flight: args.max_in_flight,
        min_interval: args.min_interval,
        skip,
        ..RunOptions::default()
    };
    let mut summary = HarnessSummary {
        systems: systems.clone(),
        already_stored: existing.len(),
        appended: 0,
        errors: 0,
        retried: 0,
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    for sys in &systems {
        let jobs = build_jobs(&manifest, sys, source.as_ref(), &args.prompts)?;
        let out = run_jobs(&jobs, args.transport.as_ref(), &opts);
        append_jsonl(&args.out, &out.records)?;
        append_jsonl(&sibling(&args.out, "errors"), &out.errors)?;
        append_jsonl(&sibling(&args.out, "retries"), &out.retry_log)?;
        summary.appended += out.records.len();
        summary.errors += out.errors.len();
        summary.retried += out.retry_log.len();
    }
    Ok(summary)
}

pub enum CapacityTransport {
    Transport(Box<dyn Transport>),
    /// JSON object mapping provider names to a fixed reply.
    Canned(PathBuf),
}

pub fn load_canned(path: &Path) -> Result<CannedTransport, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let replies = v.get("replies").unwrap_or(&v).clone();
    let replies: BTreeMap<Provider, String> = serde_json::from_value(replies)?;
    Ok(CannedTransport { replies })
}

/// Runs the probe and writes `capacity_report.json` plus the frames under
/// opaque names.
pub fn capacity_run(
    provider: Provider,
    settings: &ProbeSettings,
    transport: CapacityTransport,
    out_dir: &Path,
) -> Result<CapacityReport, PipelineError> {
    let cfg = vqa_align::profiles::reference_provider_config(provider);
    let lexicon = GradingLexicon::default();
    let report = match transport {
        CapacityTransport::Transport(t) => run_capacity(&cfg, settings, t.as_ref(), &lexicon)?,
        CapacityTransport::Canned(p) => run_capacity(&cfg, settings, &load_canned(&p)?, &lexicon)?,
    };
    let mut written = Vec::new();
    for it in &report.iterations {
        let (_, frames) = generate_case(
            settings.num_frames,
            it.star_frame_index,
            settings.frame_size,
            &settings.geometry,
        )?;
        for f in &frames {
            let p = out_dir
                .join("frames")
                .join(it.iteration.to_string())
                .join(opaque_file_name(f));
            write_if_changed(&p, &f.bytes, &mut written)?;
        }
    }
    let text = serde_json::to_string_pretty(&report)? + "\n";
    write_if_changed(
        &out_dir.join("capacity_report.json"),
        text.as_bytes(),
        &mut written,
    )?;
    Ok(report)
}

pub enum OracleSource {
    /// Output pasted from a chat session.
    File(PathBuf),
    Transport {
        transport: Box<dyn Transport>,
        model: String,
    },
}

pub fn oracle_request(system: &str, starter: &str, model: &str) -> ProviderRequest {
    ProviderRequest {
        provider: Provider::GenericHttp,
        body: json!({
            "model": model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": starter},
            ],
        }),
        repetition: 0,
    }
}

/// Writes the two oracle prompt blocks to `dir`.
pub fn write_oracle_prompt(metadata: &Path, dir: &Path) -> Result<(), PipelineError> {
    let records = load_metadata_dir(metadata)?;
    let (system, starter) = build_oracle_prompt(&records)?;
    let mut w = Vec::new();
    write_if_changed(&dir.join("oracle_system.txt"), system.as_bytes(), &mut w)?;
    write_if_changed(&dir.join("oracle_starter.txt"), starter.as_bytes(), &mut w)?;
    Ok(())
}

/// Generates video-specific questions and merges them into the manifest.
/// Sample numbering follows the sorted metadata order.
pub fn generate_questions(
    metadata: &Path,
    manifest_in: &Path,
    manifest_out: &Path,
    source: OracleSource,
) -> Result<RunManifest, PipelineError> {
    let records = load_metadata_dir(metadata)?;
    let mut manifest = load_run_manifest(manifest_in)?;
    let text = match source {
        OracleSource::File(p) => {
            std::fs::read_to_string(&p).map_err(|e| PipelineError::io(&p, e))?
        }
        OracleSource::Transport { transport, model } => {
            let (system, starter) = build_oracle_prompt(&records)?;
            transport
                .send(&oracle_request(&system, &starter, &model))?
                .text
        }
    };
    let mut qas = parse_oracle_output(&text)?;
    // Names normally echo the video ids; otherwise samples bind by position.
    let known: HashSet<&str> = records.iter().map(|r| r.video_id.as_str()).collect();
    if !qas.iter().all(|qa| known.contains(qa.video_id.as_str())) {
        if qas.len() != records.len() {
            return Err(PipelineError::Validation(format!(
                "oracle returned {} samples for {} metadata records",
                qas.len(),
                records.len()
            )));
        }
        for (qa, rec) in qas.iter_mut().zip(&records) {
            qa.video_id = rec.video_id.clone();
        }
    }
    merge_into_manifest(&mut manifest, &qas)?;
    manifest.validate()?;
    let mut w = Vec::new();
    write_if_changed(manifest_out, manifest.to_json_string().as_bytes(), &mut w)?;
    // Oracle answers are reference text only; they never enter the analysis.
    let answers = serde_json::to_string_pretty(&qas)? + "\n";
    write_if_changed(
        &sibling(manifest_out, "oracle").with_extension("json"),
        answers.as_bytes(),
        &mut w,
    )?;
    Ok(manifest)
}

pub fn default_run_options() -> RunOptions {
    RunOptions {
        sleeper: Arc::new(vqa_align_harness::jobs::ThreadSleeper),
        ..RunOptions::default()
    }
}
