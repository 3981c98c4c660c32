#![allow(dead_code)]

use std::path::{Path, PathBuf};

use vqa_align::model::{
    responses_to_jsonl, AnswerFormat, Provider, ResponseRecord, ResponseStatus, RunManifest,
};
use vqa_align::profiles::reference_manifest;
use vqa_align_cli::RunConfig;

pub const WORDS: [&str; 12] = [
    "car",
    "truck",
    "rickshaw",
    "cow",
    "pedestrian",
    "signal",
    "lane",
    "market",
    "rain",
    "dust",
    "horn",
    "bridge",
];

/// One human and two single-repetition VLMs over two clips.
pub fn mini_manifest() -> RunManifest {
    reference_manifest(&["v1", "v2"], &["h1"], &[Provider::Cogvlm, Provider::Qwen2])
}

/// Deterministic answer for system `s` on video `v`, question `qid`. VLM
/// multiple-choice answers are sometimes wordy so curation has work to do.
pub fn answer(manifest: &RunManifest, s: usize, v: usize, qid: u8) -> String {
    let q = manifest.question(qid).unwrap();
    let k = s * 7 + v * 3 + qid as usize;
    match q.answer_format {
        AnswerFormat::OpenText => format!(
            "{} near the {} and a {}",
            WORDS[k % 12],
            WORDS[(k * 5 + 1) % 12],
            WORDS[(k * 7 + s) % 12]
        ),
        _ => {
            let opts = q.options().unwrap();
            let o = &opts[k % opts.len()];
            if s > 0 && k.is_multiple_of(2) && q.answer_format == AnswerFormat::YesNo {
                format!("{o}, I think so.")
            } else {
                o.clone()
            }
        }
    }
}

pub fn mini_records(manifest: &RunManifest) -> Vec<ResponseRecord> {
    let mut out = Vec::new();
    for (s, sys) in manifest.systems.iter().enumerate() {
        for (v, clip) in manifest.videos.iter().enumerate() {
            for q in &manifest.questions {
                for rep in 0..sys.repetitions() {
                    out.push(ResponseRecord {
                        system_id: sys.id.clone(),
                        video_id: clip.id.clone(),
                        qid: q.qid,
                        repetition: rep,
                        text: answer(manifest, s, v, q.qid),
                        status: ResponseStatus::Raw,
                        normalized_text: None,
                        timestamp: "2024-11-20T09:00:00Z".into(),
                    });
                }
            }
        }
    }
    out
}

pub fn config_text(extra: &str) -> String {
    format!(
        r#"manifest = "manifest.json"
responses = ["responses.jsonl"]
output_dir = "out"
seed = 7
{extra}
[embedding]
backend = "hash"
dimension = 64
"#
    )
}

/// Writes manifest, responses and `run.toml` under `dir`; returns the config path.
pub fn write_fixture(dir: &Path, manifest: &RunManifest, records: &[ResponseRecord]) -> PathBuf {
    std::fs::write(dir.join("manifest.json"), manifest.to_json_string()).unwrap();
    std::fs::write(dir.join("responses.jsonl"), responses_to_jsonl(records)).unwrap();
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config_text("")).unwrap();
    cfg
}

pub fn mini_config(dir: &Path) -> RunConfig {
    let m = mini_manifest();
    RunConfig::load(write_fixture(dir, &m, &mini_records(&m))).unwrap()
}

/// Files under `root` with their modification times.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, std::time::SystemTime)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let e = e.unwrap();
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p, e.metadata().unwrap().modified().unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Stands in for every provider: picks one of the options listed in the
/// prompt, or describes the scene for open questions.
pub struct Scripted;

impl vqa_align_harness::transport::Transport for Scripted {
    fn send(
        &self,
        req: &vqa_align_harness::transport::ProviderRequest,
    ) -> Result<vqa_align_harness::transport::Reply, vqa_align_harness::transport::TransportError>
    {
        let key = req.key();
        let k = usize::from_str_radix(&key[..8], 16).unwrap();
        let body = req.body.to_string();
        const MARK: &str = "nothing else: ";
        let text = match body.find(MARK) {
            Some(at) => {
                let rest = &body[at + MARK.len()..];
                let end = rest.find(['"', '\\']).unwrap_or(rest.len());
                let opts: Vec<&str> = rest[..end].split(", ").collect();
                let o = opts[k % opts.len()];
                if k.is_multiple_of(3) {
                    format!("{o}.")
                } else {
                    o.to_string()
                }
            }
            None => format!(
                "The {} is next to the {}.",
                WORDS[k % 12],
                WORDS[(k / 12) % 12]
            ),
        };
        Ok(vqa_align_harness::transport::Reply {
            text,
            timestamp: "2024-12-02T08:30:00Z".into(),
        })
    }
}

pub const SEVEN: [&str; 7] = ["v1", "v2", "v3", "v4", "v5", "v6", "v7"];

/// Two humans and the six reference providers over seven clips.
pub fn full_manifest() -> RunManifest {
    reference_manifest(&SEVEN, &["h1", "h2"], &Provider::NAMED)
}

pub fn harness_args(
    manifest: &Path,
    provider: Provider,
    transport: Box<dyn vqa_align_harness::transport::Transport>,
    out: PathBuf,
) -> vqa_align_cli::ops::HarnessArgs {
    vqa_align_cli::ops::HarnessArgs {
        manifest: manifest.to_path_buf(),
        provider,
        transport,
        frames: None,
        out,
        prompts: Default::default(),
        max_in_flight: 8,
        min_interval: std::time::Duration::ZERO,
    }
}

/// Records one replay fixture per provider under `dir/fixtures` with
/// [`Scripted`], then answers every provider from those fixtures alone.
/// Returns the run config and the per-provider replay summaries.
pub fn offline_run(dir: &Path) -> (PathBuf, Vec<vqa_align_cli::ops::HarnessSummary>) {
    use vqa_align_cli::ops::{harness_run, make_transport, TransportMode};
    use vqa_align_harness::transport::RecordingTransport;

    let m = full_manifest();
    let manifest = dir.join("manifest.json");
    std::fs::write(&manifest, m.to_json_string()).unwrap();
    let humans: Vec<ResponseRecord> = mini_records(&m)
        .into_iter()
        .filter(|r| r.system_id.starts_with('h'))
        .collect();
    std::fs::write(dir.join("human.jsonl"), responses_to_jsonl(&humans)).unwrap();

    std::fs::create_dir_all(dir.join("fixtures")).unwrap();
    let mut summaries = Vec::new();
    for p in Provider::NAMED {
        let fixture = dir.join(format!("fixtures/{p}.replay.jsonl"));
        let rec = RecordingTransport::new(Scripted, &fixture).unwrap();
        let scratch = dir.join(format!("scratch/{p}.jsonl"));
        harness_run(harness_args(&manifest, p, Box::new(rec), scratch)).unwrap();

        let replay = make_transport(TransportMode::Replay, p, Some(&fixture)).unwrap();
        let out = dir.join(format!("responses/{p}.jsonl"));
        summaries.push(harness_run(harness_args(&manifest, p, replay, out)).unwrap());
    }
    let responses: Vec<String> = std::iter::once("human.jsonl".to_string())
        .chain(
            Provider::NAMED
                .iter()
                .map(|p| format!("responses/{p}.jsonl")),
        )
        .map(|s| format!("{s:?}"))
        .collect();
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "manifest = \"manifest.json\"\nresponses = [{}]\noutput_dir = \"out\"\n[embedding]\nbackend = \"hash\"\ndimension = 128\n",
            responses.join(", ")
        ),
    )
    .unwrap();
    (cfg, summaries)
}
