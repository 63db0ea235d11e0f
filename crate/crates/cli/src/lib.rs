//! `semperf` command-line front end: benchmark campaigns, Gamma-model
//! predictions, calibration and CPU-usage analysis.
//!
//! Exit codes: 0 success, 2 input error, 3 run failure, 4 degenerate
//! calibration.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use semperf::gamma::{
    analyze_usage_histogram, calibrate, calibrate_table, efficiency, normalize_node_usage, predict_speedup,
    CalibrationError, Gamma, MachineProfile, UsageHistogram, DEFAULT_BIN_WIDTH,
};
use semperf::harness::{
    records_to_csv, records_to_json, run_campaign, simulate_step, summary_table, CampaignKind, Mode, RunRecord,
};
use semperf::partition::partition_elements;
use semperf::sem::{CaseConfig, WorkUnitOptions};

use config::{builtin_machine, builtin_names, ensure_writable, Format, ToolConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_RUN: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

/// Environment variable holding the default config path.
pub const CONFIG_ENV: &str = "SEMPERF_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "semperf", version, about = "Spectral-element benchmark harness and Gamma performance model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a campaign from the config and write its records.
    Bench(BenchArgs),
    /// Predict the step time decomposition of a case on a machine.
    Predict(PredictArgs),
    /// Fit W, alpha and T_L to measured (T_P, Gamma) rows.
    Calibrate(CalibrateArgs),
    /// Histogram of CPU-usage samples with mean efficiency and Gamma.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sim,
    Exec,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Campaign name from the config.
    pub campaign: String,
    #[arg(short, long, env = CONFIG_ENV)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config's.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Built-in profile or a `[machines]` entry of the config.
    #[arg(long)]
    pub machine: String,
    /// Elements per axis: `8` or `8x8x4`.
    #[arg(long, value_parser = parse_triple)]
    pub elements: [usize; 3],
    #[arg(long)]
    pub degree: usize,
    #[arg(long, default_value_t = 1)]
    pub fields: usize,
    #[arg(long)]
    pub ranks: usize,
    /// CG iterations per step.
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    #[arg(short, long, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// CSV (`name,T_P,gamma,bandwidth_model,sharing`) or JSON array.
    pub table: PathBuf,
    /// Bandwidth of the base network [MB/s].
    #[arg(long, default_value_t = 12.0)]
    pub base_bandwidth: f64,
    /// Fit artifact path; defaults to `<table stem>.fit.json` beside the table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// CSV with `timestamp,usage` rows; usage in [0, 1].
    pub samples: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
    pub bin_width: f64,
    /// Treat usage as node-wide and rescale to the active ranks.
    #[arg(long, requires = "active_ranks")]
    pub cores_per_node: Option<usize>,
    #[arg(long, requires = "cores_per_node")]
    pub active_ranks: Option<usize>,
    /// Histogram data path; defaults to `<samples stem>.hist.dat` beside the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(['x', 'X', ',']).collect();
    let nums: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse::<usize>()).collect();
    match nums.map_err(|e| e.to_string())?.as_slice() {
        [n] => Ok([*n; 3]),
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(format!("expected N or NxNxN, got {s:?}")),
    }
}

/// A failed command: exit code and message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }

    fn run(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_RUN,
            message: message.to_string(),
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Bench(a) => cmd_bench(a, out, err),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Calibrate(a) => cmd_calibrate(a, out, err),
        Command::Analyze(a) => cmd_analyze(a, out, err),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::run(format!("cannot write {}: {e}", path.display())))
}

fn io_fail(e: std::io::Error) -> Failure {
    Failure::run(format!("cannot write output: {e}"))
}

/// Whitespace-separated `x y` rows, one per record: rank count (or degree
/// for degree sweeps) against efficiency.
fn efficiency_data(records: &[RunRecord]) -> String {
    let mut s = String::from("# x efficiency\n");
    for r in records {
        let x = match r.kind {
            CampaignKind::DegreeSweep => r.config.degree[0],
            _ => r.ranks,
        };
        s.push_str(&format!("{x} {:.6}\n", r.summary.efficiency));
    }
    s
}

/// Decimal places that print every multiple of `width` exactly.
fn edge_decimals(width: f64) -> usize {
    (0..=12)
        .find(|&d| {
            let scaled = width * 10f64.powi(d as i32);
            (scaled - scaled.round()).abs() < 1e-9 * scaled.max(1.0)
        })
        .unwrap_or(12)
}

/// Two-column histogram text: bin lower edge and count.
pub fn histogram_data(h: &UsageHistogram) -> String {
    let d = edge_decimals(h.bin_width);
    let mut s = format!(
        "# bin_lower count\n# samples {} mean_efficiency {:.6} gamma {}\n",
        h.samples,
        h.mean_efficiency,
        fmt_ratio(h.gamma)
    );
    for &(edge, count) in &h.bins {
        s.push_str(&format!("{edge:.d$} {count}\n"));
    }
    s
}

fn fmt_ratio(v: f64) -> String {
    if v.is_infinite() {
        "saturated".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let config = ToolConfig::load(&args.config).map_err(Failure::input)?;
    let mut spec = config.campaign(&args.campaign).map_err(Failure::input)?;
    let dir = args.out.clone().unwrap_or_else(|| config.output_dir.clone());
    ensure_writable(&dir).map_err(Failure::input)?;
    if let Some(m) = args.mode {
        spec.mode = match m {
            ModeArg::Sim => Mode::Simulated,
            ModeArg::Exec => Mode::Executed,
        };
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let records = run_campaign(&spec).map_err(|e| Failure::run(format!("campaign {:?} failed: {e}", spec.name)))?;

    let table = summary_table(&records);
    let mut written = Vec::new();
    for f in &config.formats {
        let (ext, body) = match f {
            Format::Csv => ("csv", records_to_csv(&records).map_err(Failure::run)?),
            Format::Json => ("json", records_to_json(&records).map_err(Failure::run)?),
        };
        let path = dir.join(format!("{}.{ext}", spec.name));
        write_file(&path, &body)?;
        written.push(path);
    }
    let path = dir.join(format!("{}.summary.txt", spec.name));
    write_file(&path, &table)?;
    written.push(path);
    let path = dir.join(format!("{}.efficiency.dat", spec.name));
    write_file(&path, &efficiency_data(&records))?;
    written.push(path);
    let samples: Vec<f64> = records.iter().flat_map(|r| r.usage_samples.iter().copied()).collect();
    if !samples.is_empty() {
        if let Ok(h) = analyze_usage_histogram(&samples, DEFAULT_BIN_WIDTH) {
            let path = dir.join(format!("{}.usage.dat", spec.name));
            write_file(&path, &histogram_data(&h))?;
            written.push(path);
        }
    }

    out.write_all(table.as_bytes()).map_err(io_fail)?;
    for r in &records {
        for w in &r.warnings {
            writeln!(err, "warning: P={}: {w}", r.ranks).map_err(io_fail)?;
        }
    }
    for p in written {
        writeln!(err, "wrote {}", p.display()).map_err(io_fail)?;
    }
    Ok(())
}

/// Output of `predict`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub machine: String,
    pub ranks: usize,
    pub elements: [usize; 3],
    pub degree: usize,
    pub fields: usize,
    pub iterations: usize,
    pub flops_per_step: u64,
    pub words_per_step: u64,
    pub latency_messages_per_step: f64,
    #[serde(rename = "T")]
    pub total: f64,
    #[serde(rename = "T_P")]
    pub compute: f64,
    #[serde(rename = "T_C")]
    pub communication: f64,
    #[serde(rename = "T_L")]
    pub latency: f64,
    pub gamma: Gamma,
    #[serde(rename = "S")]
    pub speedup: f64,
    #[serde(rename = "E")]
    pub efficiency: f64,
}

fn lookup_machine(name: &str, config: Option<&Path>) -> Result<MachineProfile, Failure> {
    if let Some(path) = config {
        let c = ToolConfig::load(path).map_err(Failure::input)?;
        if let Some(m) = c.machine(name) {
            return Ok(m);
        }
    }
    builtin_machine(name).ok_or_else(|| {
        Failure::input(format!(
            "unknown machine {name:?}; built-in profiles: {}",
            builtin_names().join(", ")
        ))
    })
}

pub fn predict(args: &PredictArgs) -> Result<Prediction, Failure> {
    let machine = lookup_machine(&args.machine, args.config.as_deref())?;
    let case = CaseConfig::cube(1, args.degree)
        .with_elements(args.elements)
        .with_fields(args.fields)
        .with_iterations(args.iterations);
    case.validate().map_err(Failure::input)?;
    let machine = MachineProfile {
        core_rate_mflops: machine.rate_for_degree(args.degree),
        ..machine
    };
    let plan = partition_elements(&case, args.ranks).map_err(Failure::input)?;
    let (step, app) = simulate_step(&case, &plan, &machine, &WorkUnitOptions::default()).map_err(Failure::run)?;
    let gamma = Gamma::new(if step.communication_time + step.latency_time == 0.0 {
        f64::INFINITY
    } else {
        step.compute_time / (step.communication_time + step.latency_time)
    })
    .map_err(Failure::run)?;
    Ok(Prediction {
        machine: machine.name.clone(),
        ranks: args.ranks,
        elements: args.elements,
        degree: args.degree,
        fields: args.fields,
        iterations: args.iterations,
        flops_per_step: app.flops_per_step,
        words_per_step: app.words_per_step,
        latency_messages_per_step: if machine.latency_s > 0.0 { step.latency_time / machine.latency_s } else { 0.0 },
        total: step.walltime,
        compute: step.compute_time,
        communication: step.communication_time,
        latency: step.latency_time,
        gamma,
        speedup: predict_speedup(args.ranks, gamma),
        efficiency: efficiency(gamma),
    })
}

pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let p = predict(args)?;
    let text = match args.format {
        OutputFormat::Json => serde_json::to_string_pretty(&p).map_err(Failure::run)? + "\n",
        OutputFormat::Table => {
            let rows = [
                ("machine", p.machine.clone()),
                ("ranks", p.ranks.to_string()),
                ("T [s]", format!("{:.6e}", p.total)),
                ("T_P [s]", format!("{:.6e}", p.compute)),
                ("T_C [s]", format!("{:.6e}", p.communication)),
                ("T_L [s]", format!("{:.6e}", p.latency)),
                ("Gamma", fmt_ratio(p.gamma.value())),
                ("S", format!("{:.4}", p.speedup)),
                ("E", format!("{:.4}", p.efficiency)),
            ];
            rows.iter().map(|(k, v)| format!("{k:<8} {v:>14}\n")).collect()
        }
    };
    out.write_all(text.as_bytes()).map_err(io_fail)
}

fn default_beside(input: &Path, suffix: &str) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    input.with_file_name(format!("{stem}{suffix}"))
}

pub fn cmd_calibrate(args: &CalibrateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.table)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", args.table.display())))?;
    let inputs = calibrate_table(&text).map_err(Failure::input)?;
    let fit = match calibrate(&inputs, args.base_bandwidth) {
        Ok(f) => f,
        Err(e @ (CalibrationError::InvalidInput { .. } | CalibrationError::Parse(_))) => return Err(Failure::input(e)),
        Err(e) => {
            return Err(Failure {
                code: EXIT_DEGENERATE,
                message: e.to_string(),
            })
        }
    };
    let json = serde_json::to_string_pretty(&fit).map_err(Failure::run)? + "\n";
    let path = args.out.clone().unwrap_or_else(|| default_beside(&args.table, ".fit.json"));
    write_file(&path, &json)?;
    out.write_all(json.as_bytes()).map_err(io_fail)?;
    writeln!(err, "wrote {}", path.display()).map_err(io_fail)
}

/// Usage column of a `timestamp,usage` CSV. A non-numeric first row is
/// taken as a header; `#` lines are comments.
pub fn read_usage_samples(text: &str) -> Result<Vec<f64>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut samples = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        if rec.len() != 2 {
            return Err(format!("row {}: expected timestamp,usage, got {} fields", i + 1, rec.len()));
        }
        match rec[1].parse::<f64>() {
            Ok(v) => samples.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(format!("row {}: bad usage {:?}: {e}", i + 1, &rec[1])),
        }
    }
    Ok(samples)
}

#[derive(Debug, Serialize)]
struct AnalyzeReport<'a> {
    samples: usize,
    bin_width: f64,
    bins: usize,
    mean_efficiency: f64,
    gamma: Gamma,
    saturated_samples: usize,
    histogram: &'a Path,
}

pub fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.samples)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", args.samples.display())))?;
    let mut samples = read_usage_samples(&text).map_err(Failure::input)?;
    if samples.is_empty() {
        return Err(Failure::input(format!("{} holds no samples", args.samples.display())));
    }
    let mut saturated = 0;
    if let (Some(cores), Some(active)) = (args.cores_per_node, args.active_ranks) {
        for v in samples.iter_mut() {
            let n = normalize_node_usage(*v, active, cores).map_err(Failure::input)?;
            saturated += n.saturated as usize;
            *v = n.usage;
        }
    }
    let h = analyze_usage_histogram(&samples, args.bin_width).map_err(Failure::input)?;
    let path = args.out.clone().unwrap_or_else(|| default_beside(&args.samples, ".hist.dat"));
    write_file(&path, &histogram_data(&h))?;
    let report = AnalyzeReport {
        samples: h.samples,
        bin_width: h.bin_width,
        bins: h.bins.len(),
        mean_efficiency: h.mean_efficiency,
        gamma: Gamma::new(h.gamma).unwrap_or(Gamma::SATURATED),
        saturated_samples: saturated,
        histogram: &path,
    };
    let json = serde_json::to_string_pretty(&report).map_err(Failure::run)? + "\n";
    out.write_all(json.as_bytes()).map_err(io_fail)?;
    writeln!(err, "wrote {}", path.display()).map_err(io_fail)
}
