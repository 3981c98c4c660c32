//! Query jobs, prompt rendering, and the retrying runner.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use vqa_align::model::{
    CellIndex, InputModality, ProviderConfig, RecordKey, ResponseRecord, ResponseStatus,
    RunManifest, SystemKind,
};

use crate::frames::{extract_frames, FrameError, FrameSource};
use crate::payload::{adapt_payload, validate_payload, FramePayload, PayloadError, Prompt};
use crate::transport::{ProviderRequest, Transport};

#[derive(Debug, Error)]
pub enum JobError {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("system `{0}` is not a VLM with a provider configuration")]
    NotAVlm(String),
    #[error("no question text for {0:?}")]
    MissingQuestion(CellIndex),
    #[error(transparent)]
    Frames(#[from] FrameError),
    #[error("{video_id}: {source}")]
    Payload {
        video_id: String,
        #[source]
        source: PayloadError,
    },
}

/// Versioned prompt settings. The multiple-choice suffix lists the allowed
/// options verbatim in place of `{options}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    pub version: String,
    pub system: String,
    pub choice_suffix: String,
    pub option_separator: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            version: "answer-format/1".into(),
            system: "You are shown frames from a short video recorded from a vehicle driving through a city. \
                     The frames are in temporal order. Answer the question about the video."
                .into(),
            choice_suffix: "\n\nAnswer with exactly one of the following options and nothing else: {options}".into(),
            option_separator: ", ".into(),
        }
    }
}

impl PromptConfig {
    pub fn render(&self, manifest: &RunManifest, cell: &CellIndex) -> Result<Prompt, JobError> {
        let mut user = manifest
            .question_text(cell)
            .ok_or_else(|| JobError::MissingQuestion(cell.clone()))?;
        if let Some(opts) = manifest.question(cell.qid).and_then(|q| q.options()) {
            user.push_str(
                &self
                    .choice_suffix
                    .replace("{options}", &opts.join(&self.option_separator)),
            );
        }
        Ok(Prompt {
            system: self.system.clone(),
            user,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
}

#[derive(Debug, Clone)]
pub struct QueryJob {
    pub system_id: String,
    pub video_id: String,
    pub qid: u8,
    pub prompt: Prompt,
    pub payload: Arc<FramePayload>,
    pub repetitions: u32,
    pub generation: Generation,
    pub config: ProviderConfig,
}

impl QueryJob {
    pub fn request(&self, repetition: u32) -> Result<ProviderRequest, PayloadError> {
        Ok(ProviderRequest {
            provider: self.config.provider,
            body: adapt_payload(&self.config, &self.payload, &self.prompt)?,
            repetition,
        })
    }
}

fn payload_for(
    cfg: &ProviderConfig,
    source: &dyn FrameSource,
    video: &vqa_align::model::VideoClipRef,
) -> Result<FramePayload, JobError> {
    let wrap = |source| JobError::Payload {
        video_id: video.id.clone(),
        source,
    };
    let fps = cfg.frame_rate_fps;
    let payload = match cfg.input_modality {
        InputModality::ImagesText => {
            FramePayload::jpeg(&extract_frames(source, video, fps)?, fps).map_err(wrap)?
        }
        InputModality::VideoText => {
            let uri = video.source_path_or_uri.as_str();
            if uri.starts_with("http://") || uri.starts_with("https://") {
                FramePayload::remote(uri, fps)
            } else {
                FramePayload::video(&source.video_bytes(video)?, "video/mp4", fps)
            }
        }
    };
    validate_payload(cfg, &payload).map_err(wrap)?;
    Ok(payload)
}

/// One job per manifest cell for `system_id`, in manifest cell order.
/// Payloads are encoded once per video and checked before returning.
pub fn build_jobs(
    manifest: &RunManifest,
    system_id: &str,
    source: &dyn FrameSource,
    prompts: &PromptConfig,
) -> Result<Vec<QueryJob>, JobError> {
    let sys = manifest
        .system(system_id)
        .ok_or_else(|| JobError::UnknownSystem(system_id.to_string()))?;
    let cfg = match (&sys.kind, &sys.provider_config) {
        (SystemKind::Vlm, Some(c)) => c.clone(),
        _ => return Err(JobError::NotAVlm(system_id.to_string())),
    };
    let payloads = manifest
        .videos
        .par_iter()
        .map(|v| payload_for(&cfg, source, v).map(|p| (v.id.clone(), Arc::new(p))))
        .collect::<Result<std::collections::HashMap<_, _>, _>>()?;
    let generation = Generation {
        max_tokens: cfg.max_tokens,
        temperature: cfg.temperature,
        top_p: cfg.top_p,
    };
    manifest
        .cell_indices()
        .into_iter()
        .map(|cell| {
            Ok(QueryJob {
                system_id: system_id.to_string(),
                prompt: prompts.render(manifest, &cell)?,
                payload: payloads[&cell.video_id].clone(),
                video_id: cell.video_id,
                qid: cell.qid,
                repetitions: cfg.repetitions,
                generation,
                config: cfg.clone(),
            })
        })
        .collect()
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

/// Records requested sleeps without waiting.
#[derive(Debug, Default)]
pub struct RecordingSleeper {
    pub slept: Mutex<Vec<Duration>>,
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, d: Duration) {
        self.slept.lock().expect("sleeper lock").push(d);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Wait before attempt `k + 2`; the last entry repeats.
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            backoff: vec![Duration::from_secs(1), Duration::from_secs(4)],
        }
    }
}

impl RetryPolicy {
    fn wait_after(&self, failed_attempt: u32) -> Duration {
        let i = (failed_attempt as usize).saturating_sub(1);
        self.backoff
            .get(i)
            .or(self.backoff.last())
            .copied()
            .unwrap_or_default()
    }
}

pub struct RunOptions {
    pub max_in_flight: usize,
    /// Minimum spacing between request starts across all workers.
    pub min_interval: Duration,
    pub retry: RetryPolicy,
    pub sleeper: Arc<dyn Sleeper>,
    /// Repetitions already in the response store; they are not requested
    /// again.
    pub skip: HashSet<RecordKey>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_in_flight: 4,
            min_interval: Duration::ZERO,
            retry: RetryPolicy::default(),
            sleeper: Arc::new(ThreadSleeper),
            skip: HashSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub system_id: String,
    pub video_id: String,
    pub qid: u8,
    pub repetition: u32,
    pub attempts: u32,
    pub error: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryLogEntry {
    pub system_id: String,
    pub video_id: String,
    pub qid: u8,
    pub repetition: u32,
    pub retries: u32,
    pub last_error: String,
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<ResponseRecord>,
    pub errors: Vec<ErrorRow>,
    pub retry_log: Vec<RetryLogEntry>,
}

struct RateGate {
    min_interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateGate {
    fn wait(&self, sleeper: &dyn Sleeper) {
        if self.min_interval.is_zero() {
            return;
        }
        let mut next = self.next.lock().expect("rate gate lock");
        let now = Instant::now();
        if let Some(t) = *next {
            if t > now {
                sleeper.sleep(t - now);
            }
        }
        *next = Some(now.max(next.unwrap_or(now)) + self.min_interval);
    }
}

enum Outcome {
    Ok(ResponseRecord, Option<RetryLogEntry>),
    Failed(ErrorRow, Option<RetryLogEntry>),
}

fn run_one(
    job: &QueryJob,
    rep: u32,
    transport: &dyn Transport,
    opts: &RunOptions,
    gate: &RateGate,
) -> Outcome {
    let row = |attempts: u32, error: String| ErrorRow {
        system_id: job.system_id.clone(),
        video_id: job.video_id.clone(),
        qid: job.qid,
        repetition: rep,
        attempts,
        error,
        timestamp: crate::now_timestamp(),
    };
    let req = match job.request(rep) {
        Ok(r) => r,
        Err(e) => return Outcome::Failed(row(0, e.to_string()), None),
    };
    let attempts = opts.retry.attempts.max(1);
    let mut last_error = String::new();
    for attempt in 1..=attempts {
        gate.wait(opts.sleeper.as_ref());
        let log = |retries: u32, last_error: &str| {
            (retries > 0).then(|| RetryLogEntry {
                system_id: job.system_id.clone(),
                video_id: job.video_id.clone(),
                qid: job.qid,
                repetition: rep,
                retries,
                last_error: last_error.to_string(),
            })
        };
        match transport.send(&req) {
            Ok(reply) => {
                let rec = ResponseRecord {
                    system_id: job.system_id.clone(),
                    video_id: job.video_id.clone(),
                    qid: job.qid,
                    repetition: rep,
                    text: reply.text,
                    status: ResponseStatus::Raw,
                    normalized_text: None,
                    timestamp: reply.timestamp,
                };
                return Outcome::Ok(rec, log(attempt - 1, &last_error));
            }
            Err(e) => {
                last_error = e.to_string();
                if !e.is_retryable() || attempt == attempts {
                    return Outcome::Failed(
                        row(attempt, last_error.clone()),
                        log(attempt - 1, &last_error),
                    );
                }
                opts.sleeper.sleep(opts.retry.wait_after(attempt));
            }
        }
    }
    unreachable!("loop returns on the last attempt")
}

/// Runs every job `repetitions` times, minus the repetitions in
/// `opts.skip`. Output order is job order, then
/// repetition, regardless of scheduling.
pub fn run_jobs(jobs: &[QueryJob], transport: &dyn Transport, opts: &RunOptions) -> RunOutput {
    let units: Vec<(usize, u32)> = jobs
        .iter()
        .enumerate()
        .flat_map(|(i, j)| (0..j.repetitions).map(move |r| (i, r)))
        .filter(|&(i, r)| {
            let j = &jobs[i];
            opts.skip.is_empty()
                || !opts.skip.contains(&RecordKey {
                    system_id: j.system_id.clone(),
                    video_id: j.video_id.clone(),
                    qid: j.qid,
                    repetition: r,
                })
        })
        .collect();
    let gate = RateGate {
        min_interval: opts.min_interval,
        next: Mutex::new(None),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.max_in_flight.max(1))
        .build()
        .expect("thread pool");
    let outcomes: Vec<Outcome> = pool.install(|| {
        units
            .par_iter()
            .map(|&(i, r)| run_one(&jobs[i], r, transport, opts, &gate))
            .collect()
    });
    let mut out = RunOutput::default();
    for o in outcomes {
        match o {
            Outcome::Ok(rec, log) => {
                out.records.push(rec);
                out.retry_log.extend(log);
            }
            Outcome::Failed(row, log) => {
                out.errors.push(row);
                out.retry_log.extend(log);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::SyntheticFrameSource;
    use crate::transport::{Reply, TransportError};
    use std::sync::atomic::{AtomicU32, Ordering};
    use vqa_align::model::Provider;
    use vqa_align::profiles::reference_manifest;

    #[test]
    fn choice_questions_get_the_option_suffix() {
        let m = reference_manifest(&["v1"], &["h1"], &[Provider::Gemini]);
        let p = PromptConfig::default();
        let q8 = p.render(&m, &CellIndex::new("v1", 8)).unwrap();
        assert!(q8.user.ends_with("0, 1, 2-3, 4-6, 7-10, 11-20, 21+"));
        let q11 = p.render(&m, &CellIndex::new("v1", 11)).unwrap();
        assert!(!q11.user.contains("options"));
    }

    #[test]
    fn jobs_cover_every_cell() {
        let m = reference_manifest(&["v1", "v2"], &["h1"], &[Provider::Pixtral]);
        let jobs = build_jobs(
            &m,
            "pixtral",
            &SyntheticFrameSource { size: 4 },
            &PromptConfig::default(),
        )
        .unwrap();
        assert_eq!(jobs.len(), 30);
        assert!(jobs
            .iter()
            .all(|j| j.repetitions == 10 && j.payload.len() == 5));
        assert!(matches!(
            build_jobs(
                &m,
                "h1",
                &SyntheticFrameSource::default(),
                &PromptConfig::default()
            ),
            Err(JobError::NotAVlm(_))
        ));
    }

    struct Flaky {
        fail_first: u32,
        calls: AtomicU32,
        retryable: bool,
    }

    impl Transport for Flaky {
        fn send(&self, _req: &ProviderRequest) -> Result<Reply, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err(if self.retryable {
                    TransportError::Http {
                        status: 503,
                        body: "busy".into(),
                    }
                } else {
                    TransportError::ReplayMiss("k".into())
                });
            }
            Ok(Reply {
                text: "ok".into(),
                timestamp: "t".into(),
            })
        }
    }

    fn single_job() -> Vec<QueryJob> {
        let mut m = reference_manifest(&["v1"], &[], &[Provider::Qwen2]);
        m.questions.retain(|q| q.qid == 11);
        build_jobs(
            &m,
            "qwen2",
            &SyntheticFrameSource::default(),
            &PromptConfig::default(),
        )
        .unwrap()
    }

    fn opts(sleeper: Arc<RecordingSleeper>) -> RunOptions {
        RunOptions {
            max_in_flight: 1,
            sleeper,
            ..RunOptions::default()
        }
    }

    #[test]
    fn two_failures_then_success_logs_two_retries() {
        let sleeper = Arc::new(RecordingSleeper::default());
        let t = Flaky {
            fail_first: 2,
            calls: AtomicU32::new(0),
            retryable: true,
        };
        let out = run_jobs(&single_job(), &t, &opts(sleeper.clone()));
        assert_eq!(out.records.len(), 1);
        assert!(out.errors.is_empty());
        assert_eq!(out.retry_log.len(), 1);
        assert_eq!(out.retry_log[0].retries, 2);
        assert_eq!(
            *sleeper.slept.lock().unwrap(),
            vec![Duration::from_secs(1), Duration::from_secs(4)]
        );
    }

    #[test]
    fn exhausted_retries_become_an_error_row() {
        let sleeper = Arc::new(RecordingSleeper::default());
        let t = Flaky {
            fail_first: 10,
            calls: AtomicU32::new(0),
            retryable: true,
        };
        let out = run_jobs(&single_job(), &t, &opts(sleeper));
        assert!(out.records.is_empty());
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].attempts, 3);
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn replay_miss_is_not_retried() {
        let sleeper = Arc::new(RecordingSleeper::default());
        let t = Flaky {
            fail_first: 1,
            calls: AtomicU32::new(0),
            retryable: false,
        };
        let out = run_jobs(&single_job(), &t, &opts(sleeper.clone()));
        assert_eq!(out.errors.len(), 1);
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
        assert!(sleeper.slept.lock().unwrap().is_empty());
    }
}
