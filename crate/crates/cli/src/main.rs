//! `ivote`: run seeded elections, attack scenarios, the PBKDF2 cracking
//! benchmark and the certificate footprint scan, and pick apart saved proxy
//! transcripts.

mod analyze;
mod config;
mod report;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ivote_core::bruteforce::{benchmark_with, BenchConfig, Progress};
use ivote_core::certscan::{footprint_report, parse_endpoints};
use ivote_core::proxy::{read_jsonl, write_jsonl, Transcript};
use ivote_core::sim::{run_attack_observed, simulate_observed, Observer, ProxyMode, Recovery, Scenario, SimError};
use serde::Serialize;

use config::{ConfigError, Overrides, Settings};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "ivote",
    version,
    about = "iVote front-end model: simulations, interception attacks, benchmark, certificate scan"
)]
struct Cli {
    /// TOML file whose settings override the flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    voters: Option<usize>,
    #[arg(long, global = true)]
    pin_digits: Option<usize>,
    #[arg(long, global = true)]
    id_digits: Option<usize>,
    /// PBKDF2 iterations for every derivation.
    #[arg(long, global = true)]
    iterations: Option<u32>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// none, transparent, passive or inject.
    #[arg(long, global = true, value_parser = parse_proxy)]
    proxy: Option<ProxyMode>,
    /// Also write the JSON report here.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Write the proxy's transcripts here as JSON Lines.
    #[arg(long, global = true, value_name = "PATH")]
    transcripts: Option<PathBuf>,
    /// Print the JSON report instead of the summary.
    #[arg(long, global = true)]
    json: bool,
    /// Report crack progress on stderr, one JSON object per line.
    #[arg(long, global = true)]
    progress: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register, log in, save, resume, cast and verify for every voter.
    Simulate,
    /// Run one attack scenario against a simulated election.
    Attack(AttackArgs),
    /// Measure PBKDF2 cracking throughput and extrapolate.
    Bench(BenchArgs),
    /// Grab certificates from listed endpoints and cluster them.
    Scan(ScanArgs),
    /// Harvest, crack and link sessions from a saved transcript file.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// JSON Lines written by --transcripts.
    input: PathBuf,
    /// Brute-force login ids where nothing was harvested.
    #[arg(long)]
    crack: bool,
    /// iVoteID to assume while cracking.
    #[arg(long, value_name = "ID")]
    known_id: Option<String>,
    /// Wall-clock limit per crack, in seconds.
    #[arg(long, value_name = "SECS")]
    budget_secs: Option<f64>,
}

#[derive(Args, Debug)]
struct AttackArgs {
    /// crack, inject, substitute, link or partials.
    #[arg(value_parser = parse_scenario)]
    scenario: Scenario,
    /// Number of targeted voters.
    #[arg(long)]
    targets: Option<usize>,
    /// How substitute and partials recover credentials: inject or crack.
    #[arg(long, value_parser = config::parse_recovery)]
    recovery: Option<Recovery>,
    /// Crack without knowing the iVoteID.
    #[arg(long)]
    unknown_id: bool,
    /// Wall-clock limit per crack, in seconds.
    #[arg(long, value_name = "SECS")]
    budget_secs: Option<f64>,
    #[arg(long)]
    slow_voters: Option<usize>,
    #[arg(long)]
    other_device: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Candidates to time.
    #[arg(long)]
    sample: Option<u64>,
    /// USD per core-hour for cost extrapolation.
    #[arg(long)]
    price: Option<f64>,
}

#[derive(Args, Debug)]
struct ScanArgs {
    /// One host[:port] [server-name] per line.
    endpoints: PathBuf,
    /// Name whose coverage is reported.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long, value_name = "MS")]
    timeout_ms: Option<u64>,
    /// Exit nonzero when any endpoint's certificate covers the target.
    #[arg(long)]
    forbid_coverage: bool,
}

fn parse_proxy(s: &str) -> Result<ProxyMode, String> {
    s.parse()
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse()
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => Self::Config(m),
            other => Self::Run(other.to_string()),
        }
    }
}

fn overrides(cli: &Cli) -> Overrides {
    let c = &cli.common;
    let mut o = Overrides {
        seed: c.seed,
        voters: c.voters,
        pin_digits: c.pin_digits,
        id_digits: c.id_digits,
        iterations: c.iterations,
        workers: c.workers,
        proxy: c.proxy,
        out: c.out.clone(),
        transcripts: c.transcripts.clone(),
        json: c.json,
        progress: c.progress,
        ..Overrides::default()
    };
    match &cli.command {
        Command::Simulate => {}
        Command::Attack(a) => {
            o.targets = a.targets;
            o.recovery = a.recovery;
            o.unknown_id = a.unknown_id;
            o.budget_secs = a.budget_secs;
            o.slow_voters = a.slow_voters;
            o.other_device = a.other_device;
        }
        Command::Bench(b) => {
            o.sample = b.sample;
            o.price = b.price;
        }
        Command::Scan(s) => {
            o.target = s.target.clone();
            o.parallelism = s.parallelism;
            o.timeout_ms = s.timeout_ms;
            o.forbid_coverage = s.forbid_coverage;
        }
        Command::Analyze(a) => o.budget_secs = a.budget_secs,
    }
    o
}

/// Prints the summary or JSON and writes `--out`. Returns whether the run
/// met its goal.
fn emit<T: Serialize>(settings: &Settings, value: &T, summary: String, ok: bool) -> Result<bool, Failure> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Failure::Run(e.to_string()))?;
    let text = if settings.json { format!("{json}\n") } else { summary };
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(Failure::Run(e.to_string())),
        _ => {}
    }
    if let Some(path) = &settings.out {
        std::fs::write(path, format!("{json}\n")).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
    }
    Ok(ok)
}

#[derive(Serialize)]
struct ProgressLine<'a, W: Serialize> {
    who: W,
    #[serde(flatten)]
    progress: &'a Progress,
}

fn print_progress<W: Serialize>(who: W, p: &Progress) {
    if let Ok(line) = serde_json::to_string(&ProgressLine { who, progress: p }) {
        eprintln!("{line}");
    }
}

fn observer(settings: &Settings) -> Observer<'static> {
    if settings.progress {
        Observer::with_progress(|who: &str, p: &Progress| print_progress(who, p))
    } else {
        Observer::default()
    }
}

fn save_transcripts(path: &Path, transcripts: &[Transcript]) -> Result<(), Failure> {
    let fail = |e: std::io::Error| Failure::Run(format!("{}: {e}", path.display()));
    let mut out = BufWriter::new(File::create(path).map_err(fail)?);
    write_jsonl(transcripts, &mut out).map_err(fail)?;
    out.flush().map_err(fail)
}

fn keep_transcripts(settings: &Settings, obs: &Observer<'_>) -> Result<(), Failure> {
    let Some(path) = &settings.transcripts else { return Ok(()) };
    if settings.sim.proxy == ProxyMode::None && obs.transcripts.is_empty() {
        eprintln!("ivote: no proxy in the path, {} will be empty", path.display());
    }
    save_transcripts(path, &obs.transcripts)
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    let settings = Settings::resolve(&overrides(cli), cli.config.as_deref())?;
    match &cli.command {
        Command::Simulate => {
            let mut obs = observer(&settings);
            let r = simulate_observed(&settings.sim, &mut obs)?;
            keep_transcripts(&settings, &obs)?;
            emit(&settings, &r, report::simulation(&r), r.success())
        }
        Command::Attack(a) => {
            let mut obs = observer(&settings);
            let r = run_attack_observed(&settings.sim, a.scenario, &mut obs)?;
            keep_transcripts(&settings, &obs)?;
            emit(&settings, &r, report::attack(&r), r.success)
        }
        Command::Analyze(a) => {
            let file = File::open(&a.input).map_err(|e| Failure::Config(format!("{}: {e}", a.input.display())))?;
            let transcripts = read_jsonl(BufReader::new(file)).map_err(|e| Failure::Config(format!("{}: {e}", a.input.display())))?;
            let plan = a.crack.then(|| analyze::CrackPlan {
                known_id: a.known_id.as_deref(),
                opts: settings.sim.crack_options(),
            });
            let show = settings.progress;
            let r = analyze::analyze(&transcripts, &settings.sim.params, plan.as_ref(), &mut |sid, p| {
                if show {
                    print_progress(sid, p);
                }
            })
            .map_err(|e| Failure::Run(e.to_string()))?;
            emit(&settings, &r, report::analysis(&r), true)
        }
        Command::Bench(_) => {
            let b = &settings.bench;
            let cfg = BenchConfig {
                iterations: b.iterations,
                price_per_core_hour: b.price_per_core_hour,
                ..BenchConfig::new(b.workers, b.sample)
            };
            let r = benchmark_with(&cfg).map_err(|e| Failure::Run(e.to_string()))?;
            emit(&settings, &r, report::bench(&r), true)
        }
        Command::Scan(s) => {
            let target = settings
                .scan
                .target
                .clone()
                .ok_or_else(|| Failure::Config("scan needs --target or `target` in the config file".into()))?;
            let text = std::fs::read_to_string(&s.endpoints).map_err(|e| Failure::Config(format!("{}: {e}", s.endpoints.display())))?;
            let endpoints = parse_endpoints(&text).map_err(|e| Failure::Config(format!("{}: {e}", s.endpoints.display())))?;
            let r = footprint_report(&endpoints, &target, settings.scan.parallelism, settings.scan.timeout)
                .map_err(|e| Failure::Config(format!("{}: {e}", s.endpoints.display())))?;
            let ok = !(settings.scan.forbid_coverage && !r.coverage.is_empty());
            emit(&settings, &r, report::scan(&r), ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILURE),
        Err(Failure::Config(m)) => {
            eprintln!("ivote: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(m)) => {
            eprintln!("ivote: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
