mod output;

use std::fmt;
use std::fs;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use qkd_core::bundles::{self, ROWS};
use qkd_core::channel::{self, BlockPolicy, ONE_DAY_S};
use qkd_core::finitekey::{self, LeakModel};
use qkd_core::model::{parse_config, ConfigError};
use qkd_core::optimize::{self, OptimizeError, SearchOptions, SearchSpace};
use qkd_core::session::transport::{Recording, TcpTransport};
use qkd_core::session::{self, SessionOptions, SessionReport, Transcript};
use qkd_core::simulate::{self, AliceView, BobView, SimError, SimOptions, PULSEWISE_LIMIT};
use qkd_core::{Basis, ExperimentConfig, Intensity, KeyLengthBreakdown, ProtocolParams, Tally};
use rayon::prelude::*;
use serde::Serialize;

use output::{csv_document, emit, json_document, write_atomic, RunManifest};

const EXIT_CONFIG: u8 = 2;
const EXIT_NO_KEY: u8 = 3;
const EXIT_RESOURCE: u8 = 4;
const EXIT_ABORT: u8 = 5;

/// Error carrying a specific process exit code.
#[derive(Debug)]
struct Exit {
    code: u8,
    message: String,
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn exit(code: u8, message: impl Into<String>) -> anyhow::Error {
    Exit {
        code,
        message: message.into(),
    }
    .into()
}

fn config_error(e: ConfigError) -> anyhow::Error {
    exit(EXIT_CONFIG, format!("config: {e}"))
}

fn sim_error(e: SimError) -> anyhow::Error {
    match e {
        SimError::TooManyPulses { .. } => exit(EXIT_RESOURCE, e.to_string()),
        SimError::ZeroDetectionProbability => exit(EXIT_CONFIG, e.to_string()),
    }
}

#[derive(Parser, Debug)]
#[command(name = "qkd", version, about = "Finite-key rates, channel simulation and post-processing for a one-decoy QKD link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Expected secret key rate of a configuration, as JSON.
    Keyrate(KeyrateArgs),
    /// Monte Carlo blocks, one CSV row per seed.
    Simulate(SimulateArgs),
    /// Run the two-party protocol on a simulated (or recorded) block.
    Session(SessionArgs),
    /// Computed rates for the shipped long-distance rows, as CSV.
    Table(TableArgs),
    /// Rate against distance for realistic and noiseless links, as CSV.
    Curve(CurveArgs),
    /// Best protocol parameters for a link, as JSON.
    Optimize(OptimizeArgs),
    /// List shipped configurations, or print one.
    Bundles { name: Option<String> },
}

#[derive(Args, Debug, Clone)]
struct ConfigSource {
    /// Config file of `key = value` lines.
    #[arg(long, short = 'c', conflicts_with = "bundle")]
    config: Option<PathBuf>,
    /// Shipped configuration by name (see `qkd bundles`).
    #[arg(long)]
    bundle: Option<String>,
    /// Override one key, e.g. `--set channel.length_km=300`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigSource {
    fn load(&self, default_bundle: Option<&str>) -> anyhow::Result<ExperimentConfig> {
        let text = match (&self.config, self.bundle.as_deref(), default_bundle) {
            (Some(p), _, _) => fs::read_to_string(p)
                .map_err(|e| exit(EXIT_CONFIG, format!("cannot read {}: {e}", p.display())))?,
            (None, Some(name), _) | (None, None, Some(name)) => bundles::named(name)
                .ok_or_else(|| exit(EXIT_CONFIG, format!("no shipped config named `{name}`")))?
                .to_string(),
            (None, None, None) => return Err(exit(EXIT_CONFIG, "one of --config or --bundle is required")),
        };
        parse_config(&apply_overrides(&text, &self.overrides)?).map_err(config_error)
    }
}

fn apply_overrides(text: &str, overrides: &[String]) -> anyhow::Result<String> {
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| exit(EXIT_CONFIG, format!("--set expects KEY=VALUE, got `{o}`")))?;
        let k = k.trim();
        lines.retain(|l| {
            let content = l.split('#').next().unwrap_or("");
            content.split_once('=').is_none_or(|(lk, _)| lk.trim() != k)
        });
        lines.push(format!("{k} = {}", v.trim()));
    }
    Ok(lines.join("\n"))
}

#[derive(Args, Debug)]
struct KeyrateArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Noiseless link (unit efficiency, no darks, no errors) at the
    /// configured distance, attenuation and pulse rate.
    #[arg(long)]
    idealized: bool,
    /// Block policy for --idealized.
    #[arg(long, value_enum, default_value_t = Policy::Day)]
    block: Policy,
    /// Write JSON here instead of stdout.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Policy {
    /// Blocks accumulated for one day.
    Day,
    /// Blocks of the configured `block.n_z_target`.
    Size,
}

#[derive(Serialize)]
struct KeyrateResult {
    mode: &'static str,
    length_km: f64,
    secret_key_rate_bps: f64,
    block_time_s: f64,
    raw_key_rate_bps: Option<f64>,
    qber_z: f64,
    protocol: ProtocolParams,
    breakdown: KeyLengthBreakdown,
}

fn cmd_keyrate(a: KeyrateArgs) -> anyhow::Result<()> {
    let cfg = a.source.load(None)?;
    let result = if a.idealized {
        let policy = match a.block {
            Policy::Day => BlockPolicy::FixedTime(ONE_DAY_S),
            Policy::Size => BlockPolicy::FixedSize(cfg.block.n_z_target),
        };
        let r = channel::idealized_bb84_skr(
            cfg.channel.length_km,
            cfg.channel.atten_db_per_km,
            policy,
            cfg.protocol.pulse_rate,
            &cfg.security,
        );
        KeyrateResult {
            mode: "idealized",
            length_km: r.length_km,
            secret_key_rate_bps: r.secret_key_rate,
            block_time_s: r.block_time_s,
            raw_key_rate_bps: None,
            qber_z: r.breakdown.qber_z,
            protocol: r.protocol,
            breakdown: r.breakdown,
        }
    } else {
        let r = channel::expected_key_rate(&cfg);
        KeyrateResult {
            mode: "finite",
            length_km: cfg.channel.length_km,
            secret_key_rate_bps: r.secret_key_rate,
            block_time_s: r.block_time_s,
            raw_key_rate_bps: Some(r.raw_key_rate),
            qber_z: r.qber_z,
            protocol: cfg.protocol,
            breakdown: r.breakdown,
        }
    };
    let mut m = RunManifest::new("keyrate").digest(cfg.digest_hex());
    if let Some(p) = &a.out {
        m = m.output(p);
    }
    emit(a.out.as_deref(), json_document(&m, &result)?.as_bytes())?;
    if result.breakdown.ell == 0 {
        return Err(exit(EXIT_NO_KEY, "no secret key at this operating point (ell = 0)"));
    }
    Ok(())
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SimMode {
    /// Sample category counts directly.
    Aggregate,
    /// Simulate every pulse (limited to 1e7 pulses).
    Pulsewise,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Number of blocks (seeds first-seed, first-seed + 1, ...).
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    #[arg(long, value_enum, default_value_t = SimMode::Aggregate)]
    mode: SimMode,
    /// Pulses per block; defaults to the count expected to give
    /// `block.n_z_target` sifted Z detections.
    #[arg(long)]
    pulses: Option<u64>,
    /// Efficiency drift as DEPTH:PERIOD_S (aggregate mode).
    #[arg(long, value_parser = parse_drift)]
    drift: Option<simulate::Drift>,
    /// Directory for per-seed pulse record files (pulsewise mode).
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

fn parse_drift(s: &str) -> Result<simulate::Drift, String> {
    let (d, p) = s.split_once(':').ok_or("expected DEPTH:PERIOD_S")?;
    let depth: f64 = d.parse().map_err(|e| format!("{e}"))?;
    let period_s: f64 = p.parse().map_err(|e| format!("{e}"))?;
    if !(0.0..=1.0).contains(&depth) || !(period_s > 0.0) {
        return Err("depth must be in [0, 1] and period positive".into());
    }
    Ok(simulate::Drift { depth, period_s })
}

#[derive(Serialize)]
struct SimRow {
    seed: u64,
    pulses: u64,
    z_signal_detections: u64,
    z_signal_errors: u64,
    z_decoy_detections: u64,
    z_decoy_errors: u64,
    x_signal_detections: u64,
    x_signal_errors: u64,
    x_decoy_detections: u64,
    x_decoy_errors: u64,
    n_z: u64,
    qber_z: f64,
    qber_x: f64,
    s_z0_lower: f64,
    s_z1_lower: f64,
    phi_z_upper: f64,
    lambda_ec: f64,
    ell: u64,
    block_time_s: f64,
    skr_bps: f64,
}

fn sim_row(cfg: &ExperimentConfig, seed: u64, pulses: u64, t: &Tally) -> SimRow {
    let n_z = t.detections(Basis::Z);
    let lambda = finitekey::ec_leakage(LeakModel::Analytic {
        efficiency: cfg.security.ec_efficiency,
        n_z,
        qber: t.qber(Basis::Z),
    });
    let b = finitekey::secret_key_length(t, &cfg.security, lambda);
    let block_time_s = pulses as f64 / cfg.protocol.pulse_rate;
    let c = |basis, k| t.get(basis, k);
    SimRow {
        seed,
        pulses,
        z_signal_detections: c(Basis::Z, Intensity::Signal).detections,
        z_signal_errors: c(Basis::Z, Intensity::Signal).errors,
        z_decoy_detections: c(Basis::Z, Intensity::Decoy).detections,
        z_decoy_errors: c(Basis::Z, Intensity::Decoy).errors,
        x_signal_detections: c(Basis::X, Intensity::Signal).detections,
        x_signal_errors: c(Basis::X, Intensity::Signal).errors,
        x_decoy_detections: c(Basis::X, Intensity::Decoy).detections,
        x_decoy_errors: c(Basis::X, Intensity::Decoy).errors,
        n_z,
        qber_z: t.qber(Basis::Z),
        qber_x: t.qber(Basis::X),
        s_z0_lower: b.s_z0_lower,
        s_z1_lower: b.s_z1_lower,
        phi_z_upper: b.phi_z_upper,
        lambda_ec: lambda,
        ell: b.ell,
        block_time_s,
        skr_bps: b.ell as f64 / block_time_s,
    }
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let cfg = a.source.load(None)?;
    let pulses = match a.pulses {
        Some(p) => p,
        None => simulate::pulses_for_target(&cfg).map_err(sim_error)?,
    };
    if a.mode == SimMode::Pulsewise && pulses > PULSEWISE_LIMIT {
        return Err(sim_error(SimError::TooManyPulses {
            requested: pulses,
            limit: PULSEWISE_LIMIT,
        }));
    }
    if let Some(d) = &a.records {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let opts = SimOptions { drift: a.drift };
    let seeds: Vec<u64> = (0..a.seeds).map(|i| a.first_seed + i).collect();
    let rows = seeds
        .par_iter()
        .map(|&seed| -> anyhow::Result<SimRow> {
            let tally = match a.mode {
                SimMode::Aggregate => simulate::simulate_pulses_aggregate(&cfg, pulses, seed, &opts).0,
                SimMode::Pulsewise => {
                    let blk = simulate::simulate_block_pulsewise(&cfg, seed, pulses).map_err(sim_error)?;
                    if let Some(d) = &a.records {
                        let mut buf = Vec::new();
                        simulate::write_records(&mut buf, &blk.records)?;
                        write_atomic(&d.join(format!("seed-{seed}.qkdp")), &buf)?;
                    }
                    blk.tally
                }
            };
            Ok(sim_row(&cfg, seed, pulses, &tally))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut m = RunManifest::new("simulate").digest(cfg.digest_hex()).seed(a.first_seed);
    if let Some(p) = &a.out {
        m = m.output(p);
    }
    emit(a.out.as_deref(), &csv_document(&m, &rows)?)?;
    Ok(())
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum RoleArg {
    Alice,
    Bob,
    /// Both parties in one process over an in-memory channel.
    Both,
}

#[derive(Args, Debug)]
struct SessionArgs {
    #[command(flatten)]
    source: ConfigSource,
    #[arg(long, value_enum, default_value_t = RoleArg::Both)]
    role: RoleArg,
    /// Accept one peer connection on this address.
    #[arg(long, conflicts_with = "connect")]
    listen: Option<String>,
    /// Connect to a listening peer.
    #[arg(long)]
    connect: Option<String>,
    /// Seed of the protocol's own randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the simulated block; both parties must agree on it.
    #[arg(long, default_value_t = 1)]
    sim_seed: u64,
    /// Use a pulse record file instead of simulating.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Per-message timeout in seconds.
    #[arg(long, default_value_t = 30.0)]
    timeout_s: f64,
    /// Directory for keys, reports and transcripts.
    #[arg(long, short = 'o', default_value = ".")]
    out_dir: PathBuf,
}

fn session_views(a: &SessionArgs, cfg: &ExperimentConfig) -> anyhow::Result<(AliceView, BobView)> {
    let records = match &a.records {
        Some(p) => {
            let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            simulate::read_records(std::io::BufReader::new(f)).map_err(|e| exit(EXIT_CONFIG, format!("{}: {e}", p.display())))?
        }
        None => {
            let pulses = simulate::pulses_for_target(cfg).map_err(sim_error)?;
            simulate::simulate_block_pulsewise(cfg, a.sim_seed, pulses).map_err(sim_error)?.records
        }
    };
    Ok(simulate::export_bitstreams(&records))
}

fn connect(a: &SessionArgs, timeout: Duration) -> anyhow::Result<TcpTransport> {
    let stream = if let Some(addr) = &a.listen {
        let l = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
        l.accept()?.0
    } else if let Some(addr) = &a.connect {
        let start = Instant::now();
        loop {
            match TcpStream::connect(addr) {
                Ok(s) => break s,
                Err(e) if start.elapsed() < timeout => {
                    let _ = e;
                    std::thread::sleep(Duration::from_millis(50));
                }
                Err(e) => return Err(exit(EXIT_ABORT, format!("abort: timeout connecting to {addr}: {e}"))),
            }
        }
    } else {
        return Err(exit(EXIT_CONFIG, "split roles need --listen or --connect"));
    };
    Ok(TcpTransport::new(stream)?)
}

fn cmd_session(a: SessionArgs) -> anyhow::Result<()> {
    let cfg = a.source.load(None)?;
    let (alice, bob) = session_views(&a, &cfg)?;
    let timeout = Duration::from_secs_f64(a.timeout_s);
    let opts = SessionOptions {
        seed: a.seed,
        timeout,
        ..SessionOptions::default()
    };
    fs::create_dir_all(&a.out_dir)?;
    let (reports, transcript): (Vec<SessionReport>, Transcript) = match a.role {
        RoleArg::Both => {
            let run = session::run_in_process(&cfg, &alice, &bob, &opts);
            (vec![run.alice, run.bob], run.transcript)
        }
        RoleArg::Alice | RoleArg::Bob => {
            let (t, log) = Recording::new(connect(&a, timeout)?);
            let r = if a.role == RoleArg::Alice {
                session::run_alice(t, &cfg, &alice, &opts)
            } else {
                session::run_bob(t, &cfg, &bob, &opts)
            };
            let transcript = std::mem::take(&mut *log.lock().unwrap());
            (vec![r], transcript)
        }
    };
    let first = match reports[0].role {
        session::Role::Alice => "alice",
        session::Role::Bob => "bob",
    };
    let tpath = a.out_dir.join(format!("{first}.transcript.txt"));
    write_atomic(&tpath, session::format_transcript(&transcript).as_bytes())?;
    let mut aborted = None;
    for r in &reports {
        let role = match r.role {
            session::Role::Alice => "alice",
            session::Role::Bob => "bob",
        };
        let kpath = a.out_dir.join(format!("{role}.key"));
        let rpath = a.out_dir.join(format!("{role}.report.json"));
        let m = RunManifest::new("session")
            .digest(cfg.digest_hex())
            .seed(a.seed)
            .output(&kpath)
            .output(&rpath)
            .output(&tpath);
        write_atomic(&kpath, &r.secret_key.to_bytes())?;
        write_atomic(&rpath, json_document(&m, r)?.as_bytes())?;
        if let (Some(ab), None) = (&r.abort, &aborted) {
            aborted = Some(format!("session aborted ({role}): {}: {}", ab.reason.as_str(), ab.detail));
        }
    }
    match aborted {
        Some(msg) => Err(exit(EXIT_ABORT, msg)),
        None => Ok(()),
    }
}

#[derive(Args, Debug)]
struct TableArgs {
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Serialize, serde::Deserialize, Debug, PartialEq)]
struct TableRowOut {
    length_km: f64,
    attn_db: f64,
    mu1: f64,
    mu2: f64,
    block_size: u64,
    block_time_h: f64,
    qber_z_pct: f64,
    phi_z_pct: f64,
    rkr_bps: f64,
    skr_bps: f64,
    skr_reference_bps: f64,
    ratio: f64,
}

fn cmd_table(a: TableArgs) -> anyhow::Result<()> {
    let rows: Vec<TableRowOut> = ROWS
        .par_iter()
        .map(|r| {
            let cfg = r.config();
            let e = channel::expected_key_rate(&cfg);
            TableRowOut {
                length_km: r.length_km,
                attn_db: channel::total_loss_db(&cfg.channel),
                mu1: cfg.protocol.mu1,
                mu2: cfg.protocol.mu2,
                block_size: cfg.block.n_z_target,
                block_time_h: e.block_time_s / 3600.0,
                qber_z_pct: 100.0 * e.qber_z,
                phi_z_pct: 100.0 * e.breakdown.phi_z_upper,
                rkr_bps: e.raw_key_rate,
                skr_bps: e.secret_key_rate,
                skr_reference_bps: r.skr_active_bps.unwrap_or(r.skr_bps),
                ratio: r.ratio(e.secret_key_rate),
            }
        })
        .collect();
    let mut m = RunManifest::new("table");
    if let Some(p) = &a.out {
        m = m.output(p);
    }
    emit(a.out.as_deref(), &csv_document(&m, &rows)?)?;
    Ok(())
}

#[derive(Args, Debug)]
struct CurveArgs {
    /// Link template; defaults to the shipped 251.7 km row.
    #[command(flatten)]
    source: ConfigSource,
    #[arg(long, default_value_t = 250.0)]
    from: f64,
    #[arg(long, default_value_t = 430.0)]
    to: f64,
    #[arg(long, default_value_t = 10.0)]
    step: f64,
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

fn cmd_curve(a: CurveArgs) -> anyhow::Result<()> {
    let cfg = a.source.load(Some("row-251.7km"))?;
    if !(a.step > 0.0) || !(a.from >= 0.0) || a.to < a.from {
        return Err(exit(EXIT_CONFIG, "need 0 <= from <= to and step > 0"));
    }
    let n = ((a.to - a.from) / a.step + 1e-9).floor() as usize;
    let lengths: Vec<f64> = (0..=n).map(|i| a.from + a.step * i as f64).collect();
    let opts = SearchOptions::default();
    let points: Vec<optimize::CurvePoint> = lengths
        .par_iter()
        .map(|&l| optimize::skr_curve(&cfg, &[l], &opts)[0])
        .collect();
    let mut m = RunManifest::new("curve").digest(cfg.digest_hex());
    if let Some(p) = &a.out {
        m = m.output(p);
    }
    emit(a.out.as_deref(), &csv_document(&m, &points)?)?;
    Ok(())
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Keep mu1 and mu2 at the configured values.
    #[arg(long)]
    fix_intensities: bool,
    #[arg(long, default_value_t = 16)]
    starts: usize,
    #[arg(long, default_value_t = SearchOptions::default().seed)]
    seed: u64,
    /// Include every evaluated point in the output.
    #[arg(long)]
    full_trace: bool,
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TraceSummary {
    evaluations: usize,
    positive: usize,
    max_skr_bps: f64,
}

#[derive(Serialize)]
struct OptimizeOut {
    best: ProtocolParams,
    skr_bps: f64,
    block_time_s: f64,
    breakdown: KeyLengthBreakdown,
    trace_summary: TraceSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<Vec<optimize::TracePoint>>,
}

fn cmd_optimize(a: OptimizeArgs) -> anyhow::Result<()> {
    let cfg = a.source.load(None)?;
    let mut space = SearchSpace::default();
    if a.fix_intensities {
        space = space.with_fixed_intensities();
    }
    let opts = SearchOptions {
        starts: a.starts.max(1),
        seed: a.seed,
        ..SearchOptions::default()
    };
    let mut m = RunManifest::new("optimize").digest(cfg.digest_hex()).seed(a.seed);
    if let Some(p) = &a.out {
        m = m.output(p);
    }
    match optimize::optimize(&cfg, &space, &opts) {
        Ok(r) => {
            let out = OptimizeOut {
                best: r.best,
                skr_bps: r.skr,
                block_time_s: r.block_time_s,
                breakdown: r.breakdown,
                trace_summary: TraceSummary {
                    evaluations: r.evaluations,
                    positive: r.trace.iter().filter(|t| t.skr > 0.0).count(),
                    max_skr_bps: r.trace.iter().map(|t| t.skr).fold(0.0, f64::max),
                },
                trace: a.full_trace.then_some(r.trace),
            };
            emit(a.out.as_deref(), json_document(&m, &out)?.as_bytes())?;
            Ok(())
        }
        Err(OptimizeError::NoPositiveRate { best, evaluation }) => {
            #[derive(Serialize)]
            struct NoKey {
                best: ProtocolParams,
                skr_bps: f64,
                breakdown: KeyLengthBreakdown,
            }
            let out = NoKey {
                best,
                skr_bps: 0.0,
                breakdown: evaluation.breakdown,
            };
            emit(a.out.as_deref(), json_document(&m, &out)?.as_bytes())?;
            Err(exit(EXIT_NO_KEY, "no positive key rate anywhere in the search box"))
        }
    }
}

fn cmd_bundles(name: Option<String>) -> anyhow::Result<()> {
    match name {
        None => {
            for n in bundles::names() {
                println!("{n}");
            }
        }
        Some(n) => {
            let text = bundles::named(&n).ok_or_else(|| exit(EXIT_CONFIG, format!("no shipped config named `{n}`")))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Keyrate(a) => cmd_keyrate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Session(a) => cmd_session(a),
        Command::Table(a) => cmd_table(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Bundles { name } => cmd_bundles(name),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qkd: {e:#}");
            match e.downcast_ref::<Exit>() {
                Some(x) => ExitCode::from(x.code),
                None => ExitCode::FAILURE,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_replace_keys() {
        let t = "a.b = 1 # note\nc.d = 2\n";
        let out = apply_overrides(t, &["a.b=5".into()]).unwrap();
        assert_eq!(out, "c.d = 2\na.b = 5");
        assert!(apply_overrides(t, &["nonsense".into()]).is_err());
    }

    #[test]
    fn drift_parser() {
        assert_eq!(parse_drift("0.2:60").unwrap().depth, 0.2);
        assert!(parse_drift("2:60").is_err());
        assert!(parse_drift("0.2").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
