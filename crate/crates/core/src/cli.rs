//! Command-line front end. `run` parses arguments, executes one subcommand
//! and returns the process exit code.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn, LevelFilter};
use rayon::prelude::*;

use crate::breath::{self, BreathConfig};
use crate::engine::{self, EnvelopeMode, RenderSource};
use crate::error::{Error, Result};
use crate::pipeline::{self, AnalysisConfig, MetricRow, StatsOptions};
use crate::simloop::{self, ChannelSet, CohortSpec};
use crate::streams::{self, Condition, SessionManifest, SessionRecording};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Parser)]
#[command(name = "breathsync", version, about = "Breath-synchronized audio envelopes and physiological analysis")]
pub struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    #[arg(long, global = true, default_value = "warn")]
    pub log_level: LevelFilter,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a closed-loop cohort and write one session per participant.
    Simulate(SimulateArgs),
    /// Render an envelope gain curve (and optionally a demo WAV).
    Envelope(EnvelopeArgs),
    /// Compute per-block metrics for every session in a directory.
    Analyze(AnalyzeArgs),
    /// Box statistics and hypothesis tests from a metrics file.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 19)]
    pub participants: usize,
    /// Coupling strength K of the simulated breathers.
    #[arg(long, default_value_t = 0.3)]
    pub coupling: f64,
    #[arg(long, default_value_t = 8)]
    pub eeg_channels: usize,
    #[arg(long, default_value_t = 250.0)]
    pub eeg_rate: f64,
    #[arg(long)]
    pub no_ecg: bool,
    #[arg(long)]
    pub no_eda: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ft,
    Pt,
    Pe,
}

#[derive(Debug, Args)]
pub struct EnvelopeArgs {
    /// Output directory; receives gains.csv and, with --wav, demo.wav.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Resting rate for pt. Measured from the session's baseline block when omitted.
    #[arg(long)]
    pub baseline_bpm: Option<f64>,
    /// Seconds to render for the tempo designs without a session.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    /// Session JSONL whose breathing stream drives pe (and sets the span).
    #[arg(long, requires = "manifest")]
    pub session: Option<PathBuf>,
    #[arg(long, requires = "session")]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = engine::DEFAULT_CONTROL_RATE_HZ)]
    pub control_rate: f64,
    /// Also write a modulated drone.
    #[arg(long)]
    pub wav: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory of `<id>.jsonl` + `<id>.manifest.json` pairs.
    #[arg(long)]
    pub input: PathBuf,
    /// Metrics CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Report JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Remove |z| > 3 values per condition before testing.
    #[arg(long)]
    pub drop_outliers: bool,
}

/// Parse, execute, and map the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::new().filter_level(cli.log_level).try_init();
    let outcome = match &cli.command {
        Command::Simulate(a) => cmd_simulate(cli.seed, a),
        Command::Envelope(a) => cmd_envelope(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        }
    }
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Io { .. } => e,
        other => Error::Ingest(format!("{}: {other}", path.display())),
    }
}

/// Reclassify a rejected flag value as a usage error.
fn as_usage(e: Error) -> Error {
    match e {
        Error::InvalidArgument(_) => e,
        other => Error::InvalidArgument(other.to_string()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, w: std::io::Result<()>, mut f: BufWriter<File>) -> Result<()> {
    w.and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}

/// Read and validate one session from its manifest and JSONL stream.
pub fn load_session(manifest_path: &Path, jsonl_path: &Path) -> Result<SessionRecording> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = SessionManifest::from_json(&text).map_err(|e| in_file(manifest_path, e))?;
    let file = File::open(jsonl_path).map_err(|e| Error::io(jsonl_path, e))?;
    let ingested = streams::ingest(&manifest, BufReader::new(file)).map_err(|e| in_file(jsonl_path, e))?;
    for w in &ingested.warnings {
        warn!("{}: {w}", jsonl_path.display());
    }
    Ok(ingested.recording)
}

/// Manifest/JSONL pairs in `dir`, sorted by file name.
pub fn session_files(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut pairs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(stem) = name.strip_suffix(MANIFEST_SUFFIX) {
            pairs.push((path.clone(), dir.join(format!("{stem}.jsonl"))));
        }
    }
    pairs.sort();
    if pairs.is_empty() {
        return Err(Error::NotFound(format!("{}: no *{MANIFEST_SUFFIX} files", dir.display())));
    }
    Ok(pairs)
}

pub fn cmd_simulate(seed: u64, a: &SimulateArgs) -> Result<()> {
    let spec = CohortSpec {
        n_participants: a.participants,
        channels: ChannelSet {
            ecg: !a.no_ecg,
            eda: !a.no_eda,
            eeg_channels: a.eeg_channels,
            eeg_rate_hz: a.eeg_rate,
        },
        ..CohortSpec::with_coupling(a.coupling, seed)
    };
    spec.validate().map_err(as_usage)?;
    create_dir(&a.out)?;
    // one participant in memory per worker
    let traces = (0..spec.n_participants)
        .into_par_iter()
        .map(|i| {
            let s = simloop::run_participant(&spec, i)?;
            let pid = &s.recording.participant_id;
            let path = a.out.join(format!("{pid}.jsonl"));
            let f = create(&path)?;
            let mut f = f;
            let w = streams::write_jsonl(&s.recording, &mut f);
            finish(&path, w, f)?;
            let path = a.out.join(format!("{pid}{MANIFEST_SUFFIX}"));
            fs::write(&path, s.recording.manifest().to_json()).map_err(|e| Error::io(&path, e))?;
            info!("wrote {pid}");
            Ok((pid.clone(), s.trace))
        })
        .collect::<Result<Vec<_>>>()?;
    let cohort = serde_json::json!({
        "spec": spec,
        "participants": traces.into_iter().collect::<std::collections::BTreeMap<_, _>>(),
    });
    let path = a.out.join("cohort.json");
    let mut text = serde_json::to_string_pretty(&cohort).expect("cohort serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn cmd_envelope(a: &EnvelopeArgs) -> Result<()> {
    let session = match (&a.session, &a.manifest) {
        (Some(s), Some(m)) => Some(load_session(m, s)?),
        _ => None,
    };
    let breathing = match &session {
        Some(rec) => Some(rec.tracks.get("breathing").ok_or_else(|| {
            Error::NotFound(format!("participant {}: no breathing channel", rec.participant_id))
        })?),
        None => None,
    };
    let mode = match a.mode {
        ModeArg::Ft => EnvelopeMode::fixed_tempo(),
        ModeArg::Pt => {
            let baseline_bpm = match (a.baseline_bpm, &session) {
                (Some(b), _) => b,
                (None, Some(rec)) => {
                    let view = rec.slice_block(Condition::Baseline)?;
                    let raw = view.tracks.get("breathing").expect("breathing present");
                    breath::baseline_rate_from_track(raw, &BreathConfig::default())?
                }
                (None, None) => {
                    return Err(Error::InvalidArgument("pt needs --baseline-bpm or --session".into()))
                }
            };
            EnvelopeMode::PersonalizedTempo { baseline_bpm }
        }
        ModeArg::Pe => EnvelopeMode::PersonalizedEnvelope,
    };
    let source = match breathing {
        Some(track) => RenderSource::Breath(track),
        None => RenderSource::Duration(a.duration),
    };
    let curve = engine::render_gain_curve(mode, source, a.control_rate).map_err(|e| match e {
        Error::InsufficientData(_) | Error::EmptySession => e,
        other => as_usage(other),
    })?;

    create_dir(&a.out)?;
    let path = a.out.join("gains.csv");
    let mut f = create(&path)?;
    let w = curve.write_csv(&mut f);
    finish(&path, w, f)?;
    if a.wav {
        let sr = engine::AUDIO_RATE_HZ;
        let audio = engine::apply_gain(&engine::drone(curve.duration_s(), sr as f64), sr as f64, &curve)?;
        engine::write_wav(&a.out.join("demo.wav"), &audio, sr)?;
    }
    Ok(())
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let pairs = session_files(&a.input)?;
    let cfg = AnalysisConfig::default();
    let per: Vec<Vec<MetricRow>> = pairs
        .par_iter()
        .map(|(manifest, jsonl)| {
            let rec = load_session(manifest, jsonl)?;
            pipeline::analyze_session(&rec, &cfg).map_err(|e| in_file(jsonl, e))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<MetricRow> = per.into_iter().flatten().collect();
    let mut f = create(&a.out)?;
    let w = pipeline::write_metrics_csv(&rows, &mut f);
    finish(&a.out, w, f)
}

pub fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let file = File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let rows = pipeline::read_metrics_csv(BufReader::new(file)).map_err(|e| in_file(&a.input, e))?;
    let report = pipeline::build_report(
        &rows,
        StatsOptions {
            drop_outliers: a.drop_outliers,
        },
    );
    fs::write(&a.out, report.to_json()).map_err(|e| Error::io(&a.out, e))
}
