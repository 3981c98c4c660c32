use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use vqa_align_cli::ops::{self, CapacityTransport, OracleSource, TransportMode};
use vqa_align_cli::serve::{serve, SurveyConfig};
use vqa_align_cli::{Pipeline, PipelineError, RunConfig, Stage};
use vqa_align_harness::capacity::ProbeSettings;
use vqa_align_harness::jobs::PromptConfig;

#[derive(Parser)]
#[command(
    name = "vqa-align",
    version,
    about = "Compare human and VLM answers to driving-video questions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and merge the manifest and raw responses.
    Ingest(StageArgs),
    /// Normalize multiple-choice answers.
    Curate(StageArgs),
    /// Embed curated answers.
    Embed(StageArgs),
    /// Gramians and cross-system similarity matrices.
    Rsa(StageArgs),
    /// Distances to the per-cell median answer.
    Metric(StageArgs),
    /// Two-component PCA per block.
    Pca(StageArgs),
    /// Consolidated report.
    Report(StageArgs),
    /// Every stage in order.
    All(StageArgs),
    /// Query VLM providers.
    Harness {
        #[command(subcommand)]
        command: HarnessCommand,
    },
    /// Synthetic frame-capacity probe.
    Capacity {
        #[command(subcommand)]
        command: CapacityCommand,
    },
    /// Video-specific question generation.
    Questions {
        #[command(subcommand)]
        command: QuestionsCommand,
    },
    /// Serve the participant survey API and static bundle.
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        /// Response store the survey appends to.
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        videos: PathBuf,
        #[arg(long, value_name = "DIR")]
        r#static: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Subcommand)]
enum HarnessCommand {
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        provider: String,
        #[arg(long, value_enum)]
        transport: TransportMode,
        /// Replay fixture to read, or to append to when recording.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Directory of extracted frames; placeholder frames when omitted.
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Prompt settings (TOML) replacing the built-in answer-format suffix.
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        max_in_flight: usize,
        /// Minimum milliseconds between request starts.
        #[arg(long, default_value_t = 0)]
        min_interval_ms: u64,
    },
}

#[derive(Subcommand)]
enum CapacityCommand {
    Run {
        #[arg(long)]
        frames: u32,
        #[arg(long)]
        provider: String,
        #[arg(long, default_value_t = 5)]
        iterations: u32,
        #[arg(long, value_enum, default_value = "live")]
        transport: TransportMode,
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Fixed replies per provider instead of a transport.
        #[arg(long, conflicts_with = "fixture")]
        canned: Option<PathBuf>,
        #[arg(long, default_value = "capacity")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum QuestionsCommand {
    /// Write the oracle prompt blocks for the metadata directory.
    Prompt {
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce video-specific questions and merge them into a manifest.
    Generate {
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Oracle output saved from a chat session.
        #[arg(long, conflicts_with = "transport")]
        oracle_output: Option<PathBuf>,
        #[arg(long, value_enum)]
        transport: Option<TransportMode>,
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long, default_value = "gpt-4o")]
        oracle_model: String,
    },
}

fn stage_command(args: &StageArgs, stages: &[Stage]) -> Result<(), PipelineError> {
    let cfg = RunConfig::load(&args.config)?;
    let mut p = Pipeline::open(cfg)?;
    for &s in stages {
        let o = p.run(s)?;
        println!(
            "{:<8} {}",
            o.stage,
            if o.ran {
                format!("done, {} files written", o.files_written)
            } else {
                "up to date".to_string()
            }
        );
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => stage_command(&a, &[Stage::Ingest])?,
        Command::Curate(a) => stage_command(&a, &[Stage::Curate])?,
        Command::Embed(a) => stage_command(&a, &[Stage::Embed])?,
        Command::Rsa(a) => stage_command(&a, &[Stage::Rsa])?,
        Command::Metric(a) => stage_command(&a, &[Stage::Metric])?,
        Command::Pca(a) => stage_command(&a, &[Stage::Pca])?,
        Command::Report(a) => stage_command(&a, &[Stage::Report])?,
        Command::All(a) => stage_command(&a, &Stage::ALL)?,
        Command::Harness {
            command:
                HarnessCommand::Run {
                    manifest,
                    provider,
                    transport,
                    fixture,
                    frames,
                    out,
                    prompts,
                    max_in_flight,
                    min_interval_ms,
                },
        } => {
            let provider = ops::parse_provider(&provider)?;
            let prompts = match prompts {
                Some(p) => {
                    let text =
                        std::fs::read_to_string(&p).with_context(|| p.display().to_string())?;
                    toml::from_str(&text)
                        .map_err(|e| PipelineError::Validation(format!("{}: {e}", p.display())))?
                }
                None => PromptConfig::default(),
            };
            let summary = ops::harness_run(ops::HarnessArgs {
                manifest,
                provider,
                transport: ops::make_transport(transport, provider, fixture.as_deref())?,
                frames,
                out,
                prompts,
                max_in_flight,
                min_interval: Duration::from_millis(min_interval_ms),
            })?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Capacity {
            command:
                CapacityCommand::Run {
                    frames,
                    provider,
                    iterations,
                    transport,
                    fixture,
                    canned,
                    out,
                },
        } => {
            let provider = ops::parse_provider(&provider)?;
            let settings = ProbeSettings {
                num_frames: frames,
                iterations,
                ..ProbeSettings::default()
            };
            let t = match canned {
                Some(p) => CapacityTransport::Canned(p),
                None => CapacityTransport::Transport(ops::make_transport(
                    transport,
                    provider,
                    fixture.as_deref(),
                )?),
            };
            let report = ops::capacity_run(provider, &settings, t, &out)?;
            for it in &report.iterations {
                println!(
                    "iteration {} star@{}: direction={} star={}{}",
                    it.iteration,
                    it.star_frame_index,
                    it.direction_ok,
                    it.star_detected,
                    it.error
                        .as_deref()
                        .map(|e| format!(" ({e})"))
                        .unwrap_or_default()
                );
            }
            println!(
                "{} at {} fps: {}",
                report.provider,
                report.fps,
                if report.passed { "PASS" } else { "FAIL" }
            );
        }
        Command::Questions { command } => match command {
            QuestionsCommand::Prompt { metadata, out } => {
                ops::write_oracle_prompt(&metadata, &out)?
            }
            QuestionsCommand::Generate {
                metadata,
                manifest,
                out,
                oracle_output,
                transport,
                fixture,
                oracle_model,
            } => {
                let source = match (oracle_output, transport) {
                    (Some(f), _) => OracleSource::File(f),
                    (None, Some(mode)) => OracleSource::Transport {
                        transport: ops::make_transport(
                            mode,
                            vqa_align::model::Provider::GenericHttp,
                            fixture.as_deref(),
                        )?,
                        model: oracle_model,
                    },
                    (None, None) => {
                        return Err(PipelineError::Validation(
                            "pass --oracle-output or --transport".into(),
                        )
                        .into())
                    }
                };
                let m = ops::generate_questions(&metadata, &manifest, &out, source)?;
                println!(
                    "{} videos with generated questions",
                    m.variable_questions.len()
                );
            }
        },
        Command::Serve {
            manifest,
            responses,
            videos,
            r#static,
            addr,
        } => {
            let manifest =
                vqa_align::model::load_run_manifest(&manifest).map_err(PipelineError::from)?;
            let sessions_path = responses.with_extension("sessions.json");
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(
                SurveyConfig {
                    manifest,
                    responses_path: responses,
                    sessions_path,
                    video_dir: videos,
                    static_dir: r#static,
                },
                addr,
            ))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<PipelineError>()
                .map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
