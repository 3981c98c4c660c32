use std::sync::Arc;

use vqa_align::model::{responses_to_jsonl, Provider, ResponseStatus};
use vqa_align::profiles::reference_manifest;
use vqa_align_harness::frames::SyntheticFrameSource;
use vqa_align_harness::jobs::{build_jobs, run_jobs, PromptConfig, RecordingSleeper, RunOptions};
use vqa_align_harness::transport::{
    ProviderRequest, RecordingTransport, ReplayEntry, ReplayTransport, Reply, Transport,
    TransportError,
};

/// Stands in for a live provider: the reply depends only on the request.
struct Oracle;

impl Transport for Oracle {
    fn send(&self, req: &ProviderRequest) -> Result<Reply, TransportError> {
        Ok(Reply {
            text: format!("reply {} rep {}", &req.key()[..12], req.repetition),
            timestamp: "2024-12-01T10:00:00Z".into(),
        })
    }
}

fn opts() -> RunOptions {
    RunOptions {
        max_in_flight: 8,
        sleeper: Arc::new(RecordingSleeper::default()),
        ..RunOptions::default()
    }
}

#[test]
fn seven_videos_at_twenty_repetitions_replay_exactly() {
    let videos = ["v1", "v2", "v3", "v4", "v5", "v6", "v7"];
    let manifest = reference_manifest(&videos, &[], &[Provider::Gemini]);
    let source = SyntheticFrameSource { size: 8 };
    let jobs = build_jobs(&manifest, "gemini-2.0", &source, &PromptConfig::default()).unwrap();
    assert_eq!(jobs.len(), 105);

    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("gemini.replay.jsonl");
    let recorded = run_jobs(
        &jobs,
        &RecordingTransport::new(Oracle, &fixture).unwrap(),
        &opts(),
    );
    assert_eq!(recorded.records.len(), 2100);
    assert!(recorded.errors.is_empty());
    assert!(recorded
        .records
        .iter()
        .all(|r| r.status == ResponseStatus::Raw));

    let replay = ReplayTransport::load(&fixture).unwrap();
    assert_eq!(replay.len(), 2100);
    let replayed = run_jobs(&jobs, &replay, &opts());
    let a = responses_to_jsonl(&recorded.records);
    let b = responses_to_jsonl(&replayed.records);
    assert_eq!(a, b);

    // Replies in the store carry the fixture text and timestamp unchanged.
    let entries: Vec<ReplayEntry> = std::fs::read_to_string(&fixture)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let mut from_fixture: Vec<(String, String)> =
        entries.into_iter().map(|e| (e.text, e.timestamp)).collect();
    let mut from_store: Vec<(String, String)> = replayed
        .records
        .into_iter()
        .map(|r| (r.text, r.timestamp))
        .collect();
    from_fixture.sort();
    from_store.sort();
    assert_eq!(from_fixture, from_store);
}

#[test]
fn output_order_is_independent_of_worker_count() {
    let manifest = reference_manifest(&["a", "b"], &[], &[Provider::Deepseek]);
    let jobs = build_jobs(
        &manifest,
        "deepseek_v2",
        &SyntheticFrameSource { size: 4 },
        &PromptConfig::default(),
    )
    .unwrap();
    let one = run_jobs(
        &jobs,
        &Oracle,
        &RunOptions {
            max_in_flight: 1,
            ..opts()
        },
    );
    let many = run_jobs(
        &jobs,
        &Oracle,
        &RunOptions {
            max_in_flight: 16,
            ..opts()
        },
    );
    assert_eq!(one, many);
    assert_eq!(one.records.len(), 2 * 15 * 10);
}

#[test]
fn pixtral_at_ten_fps_fails_before_any_request() {
    let mut manifest = reference_manifest(&["a"], &[], &[Provider::Pixtral]);
    manifest.systems[0]
        .provider_config
        .as_mut()
        .unwrap()
        .frame_rate_fps = vqa_align::model::Fps::whole(10);
    let err = build_jobs(
        &manifest,
        "pixtral",
        &SyntheticFrameSource { size: 4 },
        &PromptConfig::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("at most 6 frames"), "{err}");
}
