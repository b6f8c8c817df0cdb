//! Command-line driver: synthetic data generation, timeline alignment,
//! episode simulation, offline token validation, metric evaluation, and
//! decode-latency reports.
//!
//! Exit codes: 0 success, 2 config or I/O error, 3 validation violations,
//! 4 backend abort.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use rand::Rng;

use resect::config::{ConfigError, GrammarConfig, NoiseConfig, PlanConfig};
use resect::decoder::{validate_sequence, AlignTolerance, SafetyContext};
use resect::episode::{
    read_raw_streams, read_results, read_token_streams, write_aligned_frames,
    write_dropout_report, write_raw_streams, write_results, write_timing_csv,
    write_token_streams, DropoutReport, FileHeader, TokenRecord, KIND_ALIGNED, KIND_RAW,
    KIND_RESULTS, KIND_TOKENS,
};
use resect::eval::{aggregate, score_episodes, EvalConfig, DEFAULT_DELTA_MM, DEFAULT_SAMPLES};
use resect::geometry::{Body, Se3};
use resect::grammar::{RobotStateSample, Vocabulary};
use resect::policy::{OraclePolicy, PolicyBackend, RandomPolicy, RemotePolicy, WireFormat};
use resect::sim::{run_episode, EpisodeConfig, EpisodeRun, EpisodeStatus, ProsthesisModel};
use resect::timeline::{
    align_streams, detect_dropouts, AlignConfig, Payload, PayloadKind, ReferenceGrid,
    StampedStream,
};
use resect::{parallel, rng};

/// Directory searched for `plan.toml`, `grammar.toml`, and `noise.toml` when
/// the corresponding flag is absent.
const CONFIG_DIR_ENV: &str = "RESECT_CONFIG_DIR";

const POSE_RATE_HZ: f64 = 60.0;
const ROBOT_RATE_HZ: f64 = 120.0;
const FRAME_RATE_HZ: f64 = 30.0;

#[derive(Parser)]
#[command(
    name = "resect",
    version,
    about = "Tokenized bone-resection planning and execution harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic raw sensor streams plus reference command logs.
    GenData(GenDataArgs),
    /// Resample raw streams onto the fixed control grid.
    Resample(ResampleArgs),
    /// Run simulated episodes against a policy backend.
    Simulate(SimulateArgs),
    /// Score episode results and write report tables.
    Evaluate(EvaluateArgs),
    /// Replay token files through the mask pipeline and report violations.
    Validate(ValidateArgs),
    /// Summarize a decode-latency CSV.
    Timing(TimingArgs),
}

/// Config-file selection shared by most subcommands.
#[derive(Args)]
struct ConfigArgs {
    /// Surgical plan TOML; default $RESECT_CONFIG_DIR/plan.toml, else built-in.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Grammar TOML; default $RESECT_CONFIG_DIR/grammar.toml, else built-in.
    #[arg(long)]
    grammar: Option<PathBuf>,
    /// Noise TOML; default $RESECT_CONFIG_DIR/noise.toml, else noiseless.
    #[arg(long = "noise-config")]
    noise_config: Option<PathBuf>,
}

fn resolve<T>(
    explicit: Option<&Path>,
    name: &str,
    load: impl Fn(&Path) -> Result<T, ConfigError>,
    fallback: impl FnOnce() -> T,
) -> Result<T> {
    if let Some(path) = explicit {
        return load(path).with_context(|| format!("loading {}", path.display()));
    }
    if let Ok(dir) = std::env::var(CONFIG_DIR_ENV) {
        let path = Path::new(&dir).join(name);
        if path.exists() {
            return load(&path).with_context(|| format!("loading {}", path.display()));
        }
    }
    Ok(fallback())
}

impl ConfigArgs {
    fn plan(&self) -> Result<PlanConfig> {
        resolve(
            self.plan.as_deref(),
            "plan.toml",
            PlanConfig::load,
            PlanConfig::default,
        )
    }

    fn grammar(&self) -> Result<GrammarConfig> {
        resolve(
            self.grammar.as_deref(),
            "grammar.toml",
            GrammarConfig::load,
            GrammarConfig::default,
        )
    }

    fn noise(&self) -> Result<NoiseConfig> {
        resolve(
            self.noise_config.as_deref(),
            "noise.toml",
            NoiseConfig::load,
            NoiseConfig::default,
        )
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Resample(a) => cmd_resample(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Timing(a) => cmd_timing(a),
    }
}

// ---------------------------------------------------------------------------
// gen-data

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for episode files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    episodes: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Length of each recording, ms.
    #[arg(long, default_value_t = 2000)]
    duration_ms: i64,
    /// Width of a tracker dropout injected into every episode; 0 disables.
    #[arg(long, default_value_t = 0)]
    gap_ms: i64,
    /// Start of the injected dropout, ms from epoch.
    #[arg(long, default_value_t = 800)]
    gap_at_ms: i64,
}

/// Timestamp of sample `k` at `rate` Hz, µs. Per-tick rounding keeps the
/// cumulative rate error below one µs over any horizon.
fn tick_us(k: i64, rate: f64) -> i64 {
    ((k as f64) * 1e6 / rate).round() as i64
}

/// Smooth per-axis sinusoid parameters drawn once per episode.
struct Motion {
    base: Vector3<f64>,
    amp: Vector3<f64>,
    freq_hz: f64,
    phase: [f64; 3],
    rot_amp_deg: f64,
}

impl Motion {
    fn draw(rng: &mut impl Rng, base: Vector3<f64>) -> Self {
        Self {
            base,
            amp: Vector3::new(
                rng.gen_range(5.0..15.0),
                rng.gen_range(5.0..15.0),
                rng.gen_range(2.0..8.0),
            ),
            freq_hz: rng.gen_range(0.2..0.5),
            phase: [
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.0..TAU),
            ],
            rot_amp_deg: rng.gen_range(2.0..10.0),
        }
    }

    fn pose_at(&self, t_us: i64) -> Se3 {
        let t = t_us as f64 * 1e-6;
        let w = TAU * self.freq_hz;
        let offset = Vector3::new(
            self.amp.x * (w * t + self.phase[0]).sin(),
            self.amp.y * (w * t + self.phase[1]).sin(),
            self.amp.z * (w * t + self.phase[2]).sin(),
        );
        let yaw = self.rot_amp_deg * (w * t + self.phase[0]).sin();
        let pitch = self.rot_amp_deg * (w * t + self.phase[1]).cos();
        Se3::new(Se3::rotation_rpy_deg(yaw, pitch, 0.0), self.base + offset)
    }
}

fn synth_streams(
    n_joints: usize,
    master_seed: u64,
    episode: u64,
    duration_ms: i64,
    gap_us: Option<(i64, i64)>,
) -> Result<Vec<StampedStream>> {
    let mut rng = rng::stream(master_seed, rng::TAG_DATA, episode);
    let femur_motion = Motion::draw(&mut rng, Vector3::new(0.0, 0.0, 300.0));
    let ee_motion = Motion::draw(&mut rng, Vector3::new(60.0, -20.0, 260.0));
    let joint_freq: Vec<f64> = (0..n_joints).map(|_| rng.gen_range(0.1..0.4)).collect();
    let joint_phase: Vec<f64> = (0..n_joints).map(|_| rng.gen_range(0.0..TAU)).collect();
    let end_us = duration_ms * 1000;
    let dropped = |t: i64| gap_us.is_some_and(|(s, e)| t >= s && t < e);

    let mut femur = StampedStream::new("tracker_femur", Some(POSE_RATE_HZ));
    let mut ee = StampedStream::new("tracker_ee", Some(POSE_RATE_HZ));
    for k in 0.. {
        let t = tick_us(k, POSE_RATE_HZ);
        if t > end_us {
            break;
        }
        if dropped(t) {
            continue;
        }
        femur.push(
            t,
            Payload::Pose {
                from: Body::Camera,
                to: Body::Femur,
                pose: femur_motion.pose_at(t),
            },
        )?;
        ee.push(
            t,
            Payload::Pose {
                from: Body::Camera,
                to: Body::EndEffector,
                pose: ee_motion.pose_at(t),
            },
        )?;
    }

    let mut robot = StampedStream::new("robot", Some(ROBOT_RATE_HZ));
    for k in 0.. {
        let t = tick_us(k, ROBOT_RATE_HZ);
        if t > end_us {
            break;
        }
        let ts = t as f64 * 1e-6;
        let mut sample = RobotStateSample::zeros(n_joints);
        for j in 0..n_joints {
            let w = TAU * joint_freq[j];
            sample.q[j] = 45.0 * (w * ts + joint_phase[j]).sin();
            sample.qd[j] = 45.0 * w * (w * ts + joint_phase[j]).cos();
            sample.tau[j] = 2.0 * (w * ts + joint_phase[j] + 1.0).sin();
        }
        robot.push(t, Payload::RobotState { sample })?;
    }

    let mut frames = StampedStream::new("frames", Some(FRAME_RATE_HZ));
    for k in 0.. {
        let t = tick_us(k, FRAME_RATE_HZ);
        if t > end_us {
            break;
        }
        frames.push(t, Payload::FrameRef { frame_id: k as u64 })?;
    }

    let mut events = StampedStream::new("events", None);
    events.push(
        0,
        Payload::Event {
            label: "episode_start".into(),
        },
    )?;
    events.push(
        end_us,
        Payload::Event {
            label: "episode_end".into(),
        },
    )?;

    Ok(vec![femur, ee, robot, frames, events])
}

fn cmd_gen_data(a: GenDataArgs) -> Result<u8> {
    let plan = a.config.plan()?;
    let grammar = a.config.grammar()?;
    let vocab = Vocabulary::new(grammar.specs.clone())?;
    let model = ProsthesisModel::new(plan)?;
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))?;

    let gap_us = (a.gap_ms > 0).then(|| {
        let start = a.gap_at_ms * 1000;
        (start, start + a.gap_ms * 1000)
    });

    let mut token_records = Vec::new();
    for ep in 0..a.episodes {
        let streams = synth_streams(grammar.n_joints, a.seed, ep, a.duration_ms, gap_us)?;
        let mut header = FileHeader::new(KIND_RAW)
            .with("episode_id", ep)
            .with("master_seed", a.seed)
            .with("epoch_us", 0i64)
            .with("duration_ms", a.duration_ms)
            .with("pose_rate_hz", POSE_RATE_HZ)
            .with("robot_rate_hz", ROBOT_RATE_HZ)
            .with("frame_rate_hz", FRAME_RATE_HZ);
        if let Some((s, e)) = gap_us {
            header = header.with("gap_start_us", s).with("gap_end_us", e);
        }
        let path = a.out.join(format!("episode_{ep:03}.jsonl"));
        write_raw_streams(&path, header, &streams)?;

        // Reference command log from the scripted policy, noiseless.
        let mut policy = OraclePolicy::new(&model, &vocab)?;
        let run = run_episode(
            &model,
            &grammar,
            &vocab,
            &mut policy,
            &NoiseConfig::scaled(0.0),
            &EpisodeConfig::new(ep, a.seed),
        )?;
        token_records.push(TokenRecord {
            episode_id: ep,
            tokens: run.result.tokens,
        });
    }

    let tokens_path = a.out.join("tokens.jsonl");
    write_token_streams(
        &tokens_path,
        FileHeader::new(KIND_TOKENS).with("master_seed", a.seed),
        &token_records,
    )?;
    println!(
        "wrote {} episode file(s) and {} to {}",
        a.episodes,
        tokens_path.file_name().unwrap().to_string_lossy(),
        a.out.display()
    );
    Ok(0)
}

// ---------------------------------------------------------------------------
// resample

#[derive(Args)]
struct ResampleArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Raw-stream JSONL produced by gen-data.
    #[arg(long)]
    input: PathBuf,
    /// Aligned-frame JSONL to write.
    #[arg(long)]
    out: PathBuf,
    /// Grid step, ms.
    #[arg(long, default_value_t = 25)]
    step_ms: i64,
    /// Staleness bound for poses, robot state, and events, ms.
    #[arg(long, default_value_t = 100)]
    max_staleness_ms: i64,
    /// Staleness bound for video frame references, ms.
    #[arg(long, default_value_t = 250)]
    frame_staleness_ms: i64,
    /// Dropout report path; default `<out>.dropouts.json`.
    #[arg(long)]
    dropout_report: Option<PathBuf>,
}

fn cmd_resample(a: ResampleArgs) -> Result<u8> {
    let grammar = a.config.grammar()?;
    let vocab = Vocabulary::new(grammar.specs.clone())?;
    let (header, streams) = read_raw_streams(&a.input)?;
    anyhow::ensure!(!streams.is_empty(), "{}: no streams", a.input.display());

    let first = streams
        .iter()
        .filter_map(|s| s.records().first().map(|(t, _)| *t))
        .min()
        .context("all streams empty")?;
    let epoch = header.meta_i64("epoch_us").unwrap_or(first);
    let end = streams
        .iter()
        .filter_map(|s| s.records().last().map(|(t, _)| *t))
        .max()
        .context("all streams empty")?;
    let grid = ReferenceGrid::spanning(epoch, end, a.step_ms * 1000)?;

    let cfg = AlignConfig {
        pose_staleness_us: a.max_staleness_ms * 1000,
        robot_staleness_us: a.max_staleness_ms * 1000,
        event_staleness_us: a.max_staleness_ms * 1000,
        frame_staleness_us: a.frame_staleness_ms * 1000,
        ..AlignConfig::default()
    };
    // Frames are clean only while every pose/robot source is live.
    let required: Vec<&str> = streams
        .iter()
        .filter(|s| {
            s.records().first().is_some_and(|(_, p)| {
                matches!(p.kind(), PayloadKind::Pose | PayloadKind::RobotState)
            })
        })
        .map(|s| s.id.as_str())
        .collect();
    let frames = align_streams(&streams, &grid, &cfg, &vocab, &required)?;
    let degraded = frames.iter().filter(|f| f.is_degraded()).count();

    let out_header = FileHeader::new(KIND_ALIGNED)
        .with("source", a.input.display().to_string())
        .with("epoch_us", epoch)
        .with("step_us", a.step_ms * 1000)
        .with("max_staleness_us", a.max_staleness_ms * 1000)
        .with("frame_staleness_us", a.frame_staleness_ms * 1000);
    write_aligned_frames(&a.out, out_header, &frames)?;

    let reports: Vec<DropoutReport> = streams
        .iter()
        .map(|s| {
            let bound = s
                .records()
                .first()
                .map(|(_, p)| cfg.staleness_for(p.kind()))
                .unwrap_or(0);
            DropoutReport {
                stream: s.id.clone(),
                gaps: detect_dropouts(s, bound),
            }
        })
        .collect();
    let report_path = a.dropout_report.unwrap_or_else(|| {
        let mut os = a.out.as_os_str().to_owned();
        os.push(".dropouts.json");
        PathBuf::from(os)
    });
    write_dropout_report(&report_path, &reports)?;

    let gaps: usize = reports.iter().map(|r| r.gaps.len()).sum();
    println!(
        "aligned {} tick(s) ({} degraded), {} dropout gap(s); wrote {} and {}",
        frames.len(),
        degraded,
        gaps,
        a.out.display(),
        report_path.display()
    );
    Ok(0)
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Oracle,
    Random,
    Remote,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WireKind {
    /// 4-byte big-endian length prefix framing over TCP.
    LengthPrefixed,
    /// HTTP/1.1 POST /logits.
    Http,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for results and timings.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    runs: u64,
    #[arg(long, value_enum, default_value_t = BackendKind::Oracle)]
    backend: BackendKind,
    /// host:port of the remote policy (required for --backend remote).
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, value_enum, default_value_t = WireKind::LengthPrefixed)]
    wire: WireKind,
    #[arg(long, default_value_t = 1000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 3)]
    retries: u32,
    /// Pose-jitter scale σ in mm; overrides the noise config file.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Worker threads for episode batches; 0 keeps the library default.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Token budget per episode; default from the grammar config.
    #[arg(long)]
    budget: Option<usize>,
}

fn make_policy(
    a: &SimulateArgs,
    model: &ProsthesisModel,
    vocab: &Vocabulary,
) -> Result<Box<dyn PolicyBackend>> {
    Ok(match a.backend {
        BackendKind::Oracle => Box::new(OraclePolicy::new(model, vocab)?),
        BackendKind::Random => Box::new(RandomPolicy::new(a.seed)),
        BackendKind::Remote => {
            let endpoint = a
                .endpoint
                .clone()
                .context("--endpoint is required for --backend remote")?;
            let format = match a.wire {
                WireKind::LengthPrefixed => WireFormat::LengthPrefixed,
                WireKind::Http => WireFormat::Http,
            };
            Box::new(
                RemotePolicy::new(endpoint, format)
                    .with_timeout(Duration::from_millis(a.timeout_ms))
                    .with_retries(a.retries),
            )
        }
    })
}

fn status_str(status: &EpisodeStatus) -> String {
    match status {
        EpisodeStatus::Completed => "completed".into(),
        EpisodeStatus::BudgetExhausted => "budget-exhausted".into(),
        EpisodeStatus::Aborted { reason } => format!("aborted: {reason}"),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<u8> {
    let plan = a.config.plan()?;
    let grammar = a.config.grammar()?;
    let vocab = Vocabulary::new(grammar.specs.clone())?;
    let model = ProsthesisModel::new(plan)?;
    let noise_cfg = match a.noise {
        Some(sigma) => NoiseConfig::scaled(sigma),
        None => a.config.noise()?,
    };
    if a.jobs > 0 {
        parallel::init_jobs(a.jobs);
    }
    let budget = a.budget.unwrap_or(grammar.token_budget);
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))?;

    let runs: Vec<EpisodeRun> = parallel::map_indices(a.runs as usize, |i| {
        let mut policy = make_policy(&a, &model, &vocab)?;
        let mut ecfg = EpisodeConfig::new(i as u64, a.seed);
        ecfg.token_budget = budget;
        Ok(run_episode(
            &model,
            &grammar,
            &vocab,
            policy.as_mut(),
            &noise_cfg,
            &ecfg,
        )?)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let results: Vec<_> = runs.iter().map(|r| r.result.clone()).collect();
    let header = FileHeader::new(KIND_RESULTS)
        .with("master_seed", a.seed)
        .with("runs", a.runs)
        .with("backend", results.first().map(|r| r.backend.clone()).unwrap_or_default())
        .with("sigma_translation_mm", noise_cfg.sigma_translation_mm);
    let results_path = a.out.join("results.jsonl");
    write_results(&results_path, header, &results)?;

    let timing_rows: Vec<(u64, usize, f64)> = runs
        .iter()
        .flat_map(|r| {
            r.step_micros
                .iter()
                .enumerate()
                .map(|(step, &us)| (r.result.episode_id, step, us))
        })
        .collect();
    let timings_path = a.out.join("timings.csv");
    write_timing_csv(&timings_path, &timing_rows)?;

    for r in &results {
        println!(
            "episode {:03}  {:<18} planes_cut={} path={:.1}mm violations={}",
            r.episode_id,
            status_str(&r.status),
            r.planes_cut.len(),
            r.path_length_mm,
            r.violations.len()
        );
    }
    let steps: Vec<f64> = runs.iter().flat_map(|r| r.step_micros.iter().copied()).collect();
    if !steps.is_empty() {
        let mean_ms = steps.iter().sum::<f64>() / steps.len() as f64 / 1000.0;
        println!(
            "mean decode time per step: {:.3} ms over {} step(s)",
            mean_ms,
            steps.len()
        );
    }
    println!("wrote {} and {}", results_path.display(), timings_path.display());

    let aborted = results
        .iter()
        .filter(|r| matches!(r.status, EpisodeStatus::Aborted { .. }))
        .count();
    if aborted > 0 {
        eprintln!("{aborted} episode(s) aborted by the backend");
        return Ok(4);
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Results JSONL produced by simulate.
    #[arg(long)]
    results: PathBuf,
    /// Per-plane success threshold δ, mm.
    #[arg(long, default_value_t = DEFAULT_DELTA_MM)]
    delta: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    /// Report CSV path; default `report.csv` next to the results file.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Report JSON path; default `report.json` next to the results file.
    #[arg(long)]
    out_json: Option<PathBuf>,
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<u8> {
    let plan = a.config.plan()?;
    let model = ProsthesisModel::new(plan)?;
    let (_, results) = read_results(&a.results)?;
    anyhow::ensure!(!results.is_empty(), "{}: no results", a.results.display());
    let cfg = EvalConfig {
        delta_mm: a.delta,
        samples: a.samples,
        runs: results.len(),
    };
    let scores = score_episodes(&results, &model, &cfg)?;
    let report = aggregate(&scores, a.delta);

    let dir = a.results.parent().unwrap_or_else(|| Path::new("."));
    let csv_path = a.out_csv.unwrap_or_else(|| dir.join("report.csv"));
    let json_path = a.out_json.unwrap_or_else(|| dir.join("report.json"));
    std::fs::write(&csv_path, report.to_csv())
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(&json_path, json + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;

    for p in &report.per_plane {
        println!("{:<18} {}", p.name, p.cell());
    }
    println!("{:<18} {}", "episode", report.episode_sr_cell());
    println!("{:<18} {}", "spl", report.spl_cell());
    if report.aborted > 0 {
        println!("excluded {} aborted episode(s)", report.aborted);
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// validate

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Token-stream JSONL to check.
    #[arg(long)]
    tokens: PathBuf,
}

fn cmd_validate(a: ValidateArgs) -> Result<u8> {
    let plan = a.config.plan()?;
    let grammar = a.config.grammar()?;
    let vocab = Vocabulary::new(grammar.specs.clone())?;
    let (_, records) = read_token_streams(&a.tokens)?;
    let mut total = 0usize;
    for rec in &records {
        let ctx = SafetyContext::from_plan(&plan, AlignTolerance::default())?;
        let log = validate_sequence(&vocab, &rec.tokens, ctx);
        for v in &log {
            println!(
                "episode {}: token {}: {:?}: {}",
                rec.episode_id, v.token_index, v.kind, v.message
            );
        }
        total += log.len();
    }
    if total > 0 {
        println!("{total} violation(s) in {} episode(s)", records.len());
        Ok(3)
    } else {
        println!("clean: {} episode(s)", records.len());
        Ok(0)
    }
}

// ---------------------------------------------------------------------------
// timing

#[derive(Args)]
struct TimingArgs {
    /// Decode-latency CSV produced by simulate.
    #[arg(long)]
    input: PathBuf,
}

fn cmd_timing(a: TimingArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let mut micros = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let value = line
            .rsplit(',')
            .next()
            .and_then(|f| f.parse::<f64>().ok())
            .with_context(|| format!("{}:{}: bad row", a.input.display(), i + 1))?;
        micros.push(value);
    }
    anyhow::ensure!(!micros.is_empty(), "{}: no samples", a.input.display());
    micros.sort_by(|x, y| x.total_cmp(y));
    let n = micros.len();
    let mean = micros.iter().sum::<f64>() / n as f64;
    let pct = |p: f64| micros[(((n - 1) as f64) * p).round() as usize];
    println!("steps: {n}");
    println!("mean:  {:.3} ms", mean / 1000.0);
    println!("p50:   {:.3} ms", pct(0.50) / 1000.0);
    println!("p95:   {:.3} ms", pct(0.95) / 1000.0);
    println!("max:   {:.3} ms", micros[n - 1] / 1000.0);
    Ok(0)
}
