//! Command-line interface. Exit codes: 0 success, 1 invalid input, 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use thar_core::benchlab::{
    estimate_arena_layers, estimate_arena_quantized, estimate_energy, estimate_latency, fits_on,
    ModelRef, KIB,
};
use thar_core::datapipe::{synth_generate, ChannelGroup, DatasetStats, Recording, SynthConfig};
use thar_core::float_engine::{train, Optimizer, TrainConfig};
use thar_core::model_ir::format::ModelFile;
use thar_core::model_ir::{build_architecture, Architecture, FilterLevel};
use thar_core::quantizer::quantize_model;
use thar_core::{Precision, Tensor2D};

use crate::config::{config_file_args, create_run_dir, ConfigEcho};
use crate::dataset::{load_dataset, write_synth_dataset, DatasetError};
use crate::history::write_history;
use crate::model_io::{load_model, save_float, save_int8, ModelIoError};
use crate::profiles::Registry;
use crate::report::write_report_files;
use crate::sweep::{
    describe, mac_count_layers, prepare_group, report_for, run_sweep, PreparedData, SplitConfig,
    SweepConfig,
};
use crate::timing::timed_inference_with;

#[derive(Debug, Parser)]
#[command(
    name = "thar",
    version,
    about = "Multi-sensor activity recognition: synthetic data, training, int8 quantization and microcontroller benchmarks"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for data synthesis, weight initialization and shuffling
    #[arg(long, global = true, default_value_t = 7, value_name = "SEED")]
    pub seed: u64,
    /// Output directory [default: <RUNS_DIR>/<timestamp>-<config hash>]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Parent directory of generated run directories
    #[arg(long, global = true, default_value = "runs", value_name = "DIR")]
    pub runs_dir: PathBuf,
    /// TOML file of flag values: top-level keys plus an optional [<command>] table; command-line flags win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: one 6 Hz sensor CSV per subject session plus manifest.csv
    Synth(SynthArgs),
    /// Train a float model with leave-one-session-out validation
    Train(TrainArgs),
    /// Convert a float model to full int8 using calibration windows
    Quantize(QuantizeArgs),
    /// Score a model on the held-out session and write Markdown, CSV and SVG reports
    Eval(EvalArgs),
    /// Measure host inference latency of a model
    Bench(BenchArgs),
    /// Train, quantize and evaluate the configuration grid
    Sweep(SweepArgs),
    /// Check whether models fit each microcontroller and estimate latency and energy
    McuCheck(McuCheckArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Window length in samples at 6 Hz
    #[arg(long, default_value_t = 24, value_name = "SAMPLES")]
    pub window_len: usize,
    /// Distance between window starts in samples
    #[arg(long, default_value_t = 12, value_name = "SAMPLES")]
    pub stride: usize,
    /// Session held out for testing
    #[arg(long, default_value_t = 5, value_name = "SESSION")]
    pub held_out_session: u8,
    /// Keep at most this many evenly spaced training windows [default: all]
    #[arg(long, value_name = "WINDOWS")]
    pub max_train_windows: Option<usize>,
    /// Keep at most this many evenly spaced test windows [default: all]
    #[arg(long, value_name = "WINDOWS")]
    pub max_test_windows: Option<usize>,
}

impl SplitArgs {
    fn to_config(&self) -> SplitConfig {
        SplitConfig {
            window_len: self.window_len,
            stride: self.stride,
            held_out_session: self.held_out_session,
            max_train: self.max_train_windows,
            max_test: self.max_test_windows,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of subjects
    #[arg(long, default_value_t = 4, value_name = "COUNT")]
    pub subjects: u16,
    /// Sessions per subject
    #[arg(long, default_value_t = 5, value_name = "COUNT")]
    pub sessions: u8,
    /// Length of each session in seconds
    #[arg(long, default_value_t = 300.0, value_name = "SECONDS")]
    pub duration: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest.csv
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Channel group: g791, g768, g23 or g17
    #[arg(long, default_value = "g23", value_parser = parse_group, value_name = "GROUP")]
    pub group: ChannelGroup,
    /// Architecture: mc-cnn or deepconvlstm
    #[arg(long, default_value = "mc-cnn", value_parser = parse_arch, value_name = "ARCH")]
    pub arch: Architecture,
    /// Filter level: N1, N2 or N3
    #[arg(long, default_value = "N1", value_parser = parse_level, value_name = "LEVEL")]
    pub level: FilterLevel,
    /// Training epochs
    #[arg(long, default_value_t = 10, value_name = "COUNT")]
    pub epochs: usize,
    /// Windows per mini-batch
    #[arg(long, default_value_t = 32, value_name = "WINDOWS")]
    pub batch_size: usize,
    /// Optimizer step size (dimensionless)
    #[arg(long, default_value_t = 1e-3, value_name = "RATE")]
    pub learning_rate: f32,
    /// Optimizer: adam or sgd
    #[arg(long, default_value = "adam", value_parser = parse_optimizer, value_name = "NAME")]
    pub optimizer: Optimizer,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Float model file (.thar)
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Dataset directory or manifest.csv supplying calibration windows
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Normalization statistics [default: stats.json beside the model]
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Training windows used to calibrate activation ranges
    #[arg(long, default_value_t = 200, value_name = "WINDOWS")]
    pub calibration_windows: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file (.thar), float or int8
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Dataset directory or manifest.csv
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Normalization statistics [default: stats.json beside the model]
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Microcontroller profile registry (TOML) [default: built-in profiles]
    #[arg(long, value_name = "FILE")]
    pub profiles: Option<PathBuf>,
    /// Host timing repetitions added to the report; 0 skips timing
    #[arg(long, default_value_t = 0, value_name = "COUNT")]
    pub host_reps: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Model file (.thar), float or int8
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Timed inferences
    #[arg(long, default_value_t = 100, value_name = "COUNT")]
    pub repetitions: usize,
    /// Untimed inferences run first
    #[arg(long, default_value_t = 3, value_name = "COUNT")]
    pub warmup: usize,
    /// Take the input window from this dataset's held-out session [default: fixed synthetic window]
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Normalization statistics used with --data [default: stats.json beside the model]
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dataset directory or manifest.csv [default: synthesize in memory]
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Subjects to synthesize when --data is absent
    #[arg(long, default_value_t = 4, value_name = "COUNT")]
    pub subjects: u16,
    /// Sessions per subject to synthesize when --data is absent
    #[arg(long, default_value_t = 5, value_name = "COUNT")]
    pub sessions: u8,
    /// Session length in seconds when --data is absent
    #[arg(long, default_value_t = 300.0, value_name = "SECONDS")]
    pub duration: f64,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Worker threads; 0 uses one per core
    #[arg(long, default_value_t = 0, value_name = "THREADS")]
    pub jobs: usize,
    /// Architectures, comma separated
    #[arg(long, default_value = "mc-cnn,deepconvlstm", value_delimiter = ',', value_parser = parse_arch, value_name = "ARCH")]
    pub archs: Vec<Architecture>,
    /// Channel groups, comma separated
    #[arg(long, default_value = "g17,g23,g768,g791", value_delimiter = ',', value_parser = parse_group, value_name = "GROUP")]
    pub groups: Vec<ChannelGroup>,
    /// Filter levels, comma separated
    #[arg(long, default_value = "N1,N2,N3", value_delimiter = ',', value_parser = parse_level, value_name = "LEVEL")]
    pub levels: Vec<FilterLevel>,
    /// Training epochs per MC-CNN configuration
    #[arg(long, default_value_t = 5, value_name = "COUNT")]
    pub epochs: usize,
    /// Windows per mini-batch
    #[arg(long, default_value_t = 32, value_name = "WINDOWS")]
    pub batch_size: usize,
    /// Optimizer step size (dimensionless)
    #[arg(long, default_value_t = 1e-3, value_name = "RATE")]
    pub learning_rate: f32,
    /// Training windows used to calibrate activation ranges
    #[arg(long, default_value_t = 200, value_name = "WINDOWS")]
    pub calibration_windows: usize,
    /// Host timing repetitions per configuration; 0 keeps reports free of wall-clock data
    #[arg(long, default_value_t = 0, value_name = "COUNT")]
    pub host_reps: usize,
    /// Microcontroller profile registry (TOML) [default: built-in profiles]
    #[arg(long, value_name = "FILE")]
    pub profiles: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McuCheckArgs {
    /// Model files (.thar), comma separated or repeated
    #[arg(long, required = true, value_delimiter = ',', value_name = "FILE")]
    pub model: Vec<PathBuf>,
    /// Profiles to check, case-insensitive, comma separated or repeated [default: all]
    #[arg(long, value_delimiter = ',', value_name = "NAME")]
    pub profile: Vec<String>,
    /// Microcontroller profile registry (TOML) [default: built-in profiles]
    #[arg(long, value_name = "FILE")]
    pub profiles: Option<PathBuf>,
    /// Flash reserved for firmware and runtime, in KiB [default: from registry]
    #[arg(long, value_name = "KIB")]
    pub overhead_flash_kib: Option<u64>,
    /// RAM reserved for firmware and runtime, in KiB [default: from registry]
    #[arg(long, value_name = "KIB")]
    pub overhead_ram_kib: Option<u64>,
}

fn parse_group(s: &str) -> Result<ChannelGroup, String> {
    s.parse()
        .map_err(|e: thar_core::datapipe::DataError| e.to_string())
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    Architecture::parse(s)
        .ok_or_else(|| format!("unknown architecture `{s}` (mc-cnn, deepconvlstm)"))
}

fn parse_level(s: &str) -> Result<FilterLevel, String> {
    FilterLevel::parse(s).ok_or_else(|| format!("unknown filter level `{s}` (N1, N2, N3)"))
}

fn parse_optimizer(s: &str) -> Result<Optimizer, String> {
    match s.to_ascii_lowercase().as_str() {
        "adam" => Ok(Optimizer::Adam),
        "sgd" => Ok(Optimizer::Sgd),
        _ => Err(format!("unknown optimizer `{s}` (adam, sgd)")),
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing or malformed input files.
    Validation(String),
    /// Anything that fails after inputs were accepted.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

const COMMANDS: [&str; 7] = [
    "synth",
    "train",
    "quantize",
    "eval",
    "bench",
    "sweep",
    "mcu-check",
];

/// Appends `--key=value` for every config-file key not already given on the command line.
pub fn merge_config_file(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut config = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            config = argv.get(i + 1).cloned();
        } else if let Some(v) = a.strip_prefix("--config=") {
            config = Some(v.to_string());
        }
    }
    let Some(path) = config else {
        return Ok(argv);
    };
    let text =
        fs::read_to_string(&path).map_err(|e| invalid(format!("config file {path}: {e}")))?;
    let command = argv
        .iter()
        .skip(1)
        .find(|a| COMMANDS.contains(&a.as_str()))
        .cloned()
        .unwrap_or_default();
    let pairs = config_file_args(&text, &command)
        .map_err(|e| invalid(format!("config file {path}: {e}")))?;
    let mut out = argv.clone();
    for (key, values) in pairs {
        let flag = format!("--{key}");
        let given = argv
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if !given && key != "config" {
            out.push(format!("{flag}={}", values.join(",")));
        }
    }
    Ok(out)
}

/// Every argument of the invoked subcommand with its effective raw value.
fn echo_from_matches(m: &ArgMatches) -> ConfigEcho {
    let (name, sub) = m.subcommand().expect("subcommand is required");
    let cmd = Cli::command();
    let sub_cmd = cmd.find_subcommand(name).expect("parsed subcommand exists");
    let is_arg = |id: &clap::Id| {
        cmd.get_arguments()
            .chain(sub_cmd.get_arguments())
            .any(|a| a.get_id() == id)
    };
    let mut args = BTreeMap::new();
    for id in sub.ids().filter(|id| is_arg(id)) {
        let key = id.as_str().to_string();
        let Some(raw) = sub.get_raw(&key) else {
            continue;
        };
        let vals: Vec<toml::Value> = raw
            .map(|v| toml::Value::String(v.to_string_lossy().into_owned()))
            .collect();
        let v = if vals.len() == 1 {
            vals.into_iter().next().unwrap()
        } else {
            toml::Value::Array(vals)
        };
        args.insert(key, v);
    }
    ConfigEcho {
        command: name.to_string(),
        args,
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<String> = argv
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let argv = match merge_config_file(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.exit_code() == 0 { 0 } else { 1 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    let echo = echo_from_matches(&matches);
    match execute(&cli, &echo) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, echo: &ConfigEcho) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(&cli.common, a, echo),
        Command::Train(a) => cmd_train(&cli.common, a, echo),
        Command::Quantize(a) => cmd_quantize(&cli.common, a, echo),
        Command::Eval(a) => cmd_eval(&cli.common, a, echo),
        Command::Bench(a) => cmd_bench(&cli.common, a, echo),
        Command::Sweep(a) => cmd_sweep(&cli.common, a, echo),
        Command::McuCheck(a) => cmd_mcu_check(&cli.common, a, echo),
    }
}

fn run_dir(common: &Common, echo: &ConfigEcho) -> Result<PathBuf, CliError> {
    create_run_dir(common.out.as_deref(), &common.runs_dir, echo)
        .map_err(|e| runtime(format!("cannot create output directory: {e}")))
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_recordings(path: &Path) -> Result<Vec<Recording>, CliError> {
    load_dataset(path).map_err(|e| match e {
        DatasetError::Io { .. } => runtime(e),
        _ => invalid(e),
    })
}

fn load(path: &Path) -> Result<ModelFile, CliError> {
    load_model(path).map_err(|e| match e {
        ModelIoError::Io { .. } => runtime(e),
        _ => invalid(e),
    })
}

fn stats_path(model: &Path, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| model.parent().unwrap_or(Path::new(".")).join("stats.json"))
}

fn load_stats(path: &Path) -> Result<DatasetStats, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| invalid(format!("normalization statistics {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| invalid(format!("normalization statistics {}: {e}", path.display())))
}

fn group_of(model: &ModelFile) -> Result<ChannelGroup, CliError> {
    let ch = model.input_shape().channels;
    ChannelGroup::ALL
        .into_iter()
        .find(|g| g.len() == ch)
        .ok_or_else(|| {
            invalid(format!(
                "model expects {ch} channels, which is not a channel group"
            ))
        })
}

fn load_registry(path: Option<&Path>) -> Result<Registry, CliError> {
    match path {
        Some(p) => Registry::load(p).map_err(invalid),
        None => Ok(Registry::default()),
    }
}

/// Windows from `data`, normalized with the model's saved statistics.
fn model_data(
    model_path: &Path,
    model: &ModelFile,
    data: &Path,
    stats: Option<&Path>,
    split: &SplitArgs,
) -> Result<PreparedData, CliError> {
    let group = group_of(model)?;
    let stats = load_stats(&stats_path(model_path, stats))?;
    if stats.channels() != group.len() {
        return Err(invalid(format!(
            "statistics cover {} channels but the model expects {}",
            stats.channels(),
            group.len()
        )));
    }
    let recordings = load_recordings(data)?;
    let mut split = split.to_config();
    split.window_len = model.input_shape().steps;
    prepare_group(&recordings, group, &split, Some(&stats)).map_err(invalid)
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

fn cmd_synth(common: &Common, a: &SynthArgs, echo: &ConfigEcho) -> Result<(), CliError> {
    let cfg = SynthConfig {
        seed: common.seed,
        subjects: a.subjects,
        sessions_per_subject: a.sessions,
        duration_s: a.duration,
        ..SynthConfig::default()
    };
    let ds = synth_generate(&cfg).map_err(invalid)?;
    let dir = run_dir(common, echo)?;
    let data_dir = dir.join("dataset");
    let entries = write_synth_dataset(&data_dir, &ds).map_err(runtime)?;
    let rows: usize = ds.recordings.iter().map(Recording::len).sum();
    println!(
        "wrote {} recordings ({rows} frames at 6 Hz) to {}",
        entries.len(),
        data_dir.display()
    );
    Ok(())
}

fn cmd_train(common: &Common, a: &TrainArgs, echo: &ConfigEcho) -> Result<(), CliError> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed: common.seed,
        optimizer: a.optimizer,
    };
    cfg.validate().map_err(invalid)?;
    let graph = build_architecture(
        a.arch,
        a.group.len(),
        a.level,
        a.split.window_len,
        common.seed,
    )
    .map_err(invalid)?;
    let recordings = load_recordings(&a.data)?;
    let data = prepare_group(&recordings, a.group, &a.split.to_config(), None).map_err(invalid)?;
    let dir = run_dir(common, echo)?;
    let (trained, history) = train(&graph, &data.train, &data.test, &cfg).map_err(runtime)?;
    save_float(&dir.join("model.thar"), &trained).map_err(runtime)?;
    let mut hist = Vec::new();
    write_history(&mut hist, &history).map_err(runtime)?;
    write_file(&dir.join("history.csv"), hist)?;
    write_file(
        &dir.join("stats.json"),
        serde_json::to_string(&data.stats).map_err(runtime)?,
    )?;
    let config = describe(trained.input_shape(), trained.layers(), Precision::Float32)
        .expect("grid architectures are recognized");
    let report = report_for(
        config,
        ModelRef::Float(&trained),
        Some(&data.test),
        &Registry::default(),
        0,
    )
    .map_err(runtime)?;
    write_report_files(&dir, std::slice::from_ref(&report)).map_err(runtime)?;
    println!(
        "trained {} {} {} on {} windows; held-out session {}: accuracy {}, macro F1 {:.3}",
        a.arch.as_str(),
        a.group,
        a.level.as_str(),
        data.train.len(),
        a.split.held_out_session,
        pct(report.accuracy.unwrap_or(0.0)),
        report.macro_f1.unwrap_or(0.0),
    );
    println!("model written to {}", dir.join("model.thar").display());
    Ok(())
}

fn cmd_quantize(common: &Common, a: &QuantizeArgs, echo: &ConfigEcho) -> Result<(), CliError> {
    let model = load(&a.model)?;
    let ModelFile::Float(graph) = &model else {
        return Err(invalid(format!("{} is already int8", a.model.display())));
    };
    if a.calibration_windows == 0 {
        return Err(invalid("--calibration-windows must be at least 1"));
    }
    let data = model_data(&a.model, &model, &a.data, a.stats.as_deref(), &a.split)?;
    let dir = run_dir(common, echo)?;
    let step = (data.train.len() / a.calibration_windows).max(1);
    let reps = data
        .train
        .iter()
        .step_by(step)
        .take(a.calibration_windows)
        .map(|s| &s.window);
    let q = quantize_model(graph, reps).map_err(runtime)?;
    let float_bytes = fs::metadata(&a.model).map(|m| m.len()).unwrap_or(0);
    let int8_bytes = save_int8(&dir.join("model_int8.thar"), &q).map_err(runtime)?;
    write_file(
        &dir.join("stats.json"),
        serde_json::to_string(&data.stats).map_err(runtime)?,
    )?;
    println!(
        "int8 model: {int8_bytes} bytes ({:.2}x smaller than {float_bytes} float bytes), written to {}",
        float_bytes as f64 / int8_bytes as f64,
        dir.join("model_int8.thar").display()
    );
    Ok(())
}

fn model_ref(model: &ModelFile) -> ModelRef<'_> {
    match model {
        ModelFile::Float(g) => ModelRef::Float(g),
        ModelFile::Int8(q) => ModelRef::Int8(q),
    }
}

fn cmd_eval(common: &Common, a: &EvalArgs, echo: &ConfigEcho) -> Result<(), CliError> {
    let model = load(&a.model)?;
    let registry = load_registry(a.profiles.as_deref())?;
    let config = describe(model.input_shape(), &model.layers(), model.precision())
        .ok_or_else(|| invalid("model does not match a known architecture and filter level"))?;
    let data = model_data(&a.model, &model, &a.data, a.stats.as_deref(), &a.split)?;
    let dir = run_dir(common, echo)?;
    let report = report_for(
        config,
        model_ref(&model),
        Some(&data.test),
        &registry,
        a.host_reps,
    )
    .map_err(runtime)?;
    write_report_files(&dir, std::slice::from_ref(&report)).map_err(runtime)?;
    println!(
        "{} windows: accuracy {}, macro F1 {:.3}; reports in {}",
        data.test.len(),
        pct(report.accuracy.unwrap_or(0.0)),
        report.macro_f1.unwrap_or(0.0),
        dir.display()
    );
    Ok(())
}

fn cmd_bench(common: &Common, a: &BenchArgs, echo: &ConfigEcho) -> Result<(), CliError> {
    let model = load(&a.model)?;
    if a.repetitions == 0 {
        return Err(invalid("--repetitions must be at least 1"));
    }
    let shape = model.input_shape();
    let window = match &a.data {
        Some(d) => {
            let data = model_data(&a.model, &model, d, a.stats.as_deref(), &a.split)?;
            data.test[0].window.clone()
        }
        None => Tensor2D::from_fn(shape.steps, shape.channels, |t, c| {
            ((t as f32 * 0.7 + c as f32 * 0.13).sin() * 1.5).clamp(-3.0, 3.0)
        }),
    };
    let dir = run_dir(common, echo)?;
    let stats = timed_inference_with(model_ref(&model), &window, a.repetitions, a.warmup)
        .map_err(runtime)?;
    let body = format!(
        "model,precision,runs,mean_us,p50_us,p95_us\n{},{},{},{},{},{}\n",
        a.model.display(),
        model.precision().as_str(),
        stats.runs,
        stats.mean_us,
        stats.p50_us,
        stats.p95_us
    );
    write_file(&dir.join("bench.csv"), body)?;
    println!(
        "{} runs: mean {:.1} us, p50 {:.1} us, p95 {:.1} us",
        stats.runs, stats.mean_us, stats.p50_us, stats.p95_us
    );
    Ok(())
}

fn cmd_sweep(common: &Common, a: &SweepArgs, echo: &ConfigEcho) -> Result<(), CliError> {
    let train_cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed: common.seed,
        optimizer: Optimizer::Adam,
    };
    train_cfg.validate().map_err(invalid)?;
    if a.archs.is_empty() || a.groups.is_empty() || a.levels.is_empty() {
        return Err(invalid(
            "--archs, --groups and --levels need at least one value each",
        ));
    }
    let registry = load_registry(a.profiles.as_deref())?;
    let recordings = match &a.data {
        Some(d) => load_recordings(d)?,
        None => {
            let cfg = SynthConfig {
                seed: common.seed,
                subjects: a.subjects,
                sessions_per_subject: a.sessions,
                duration_s: a.duration,
                window_len: a.split.window_len,
            };
            synth_generate(&cfg).map_err(invalid)?.recordings
        }
    };
    let cfg = SweepConfig {
        seed: common.seed,
        archs: a.archs.clone(),
        groups: a.groups.clone(),
        levels: a.levels.clone(),
        precisions: vec![Precision::Float32, Precision::Int8Full],
        split: a.split.to_config(),
        train: train_cfg,
        calibration_windows: a.calibration_windows.max(1),
        jobs: a.jobs,
        host_latency_reps: a.host_reps,
        registry,
    };
    let dir = run_dir(common, echo)?;
    let reports = run_sweep(&cfg, &recordings).map_err(runtime)?;
    write_report_files(&dir, &reports).map_err(runtime)?;
    let failed = reports.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} configurations evaluated, {failed} failed; reports in {}",
        reports.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_mcu_check(common: &Common, a: &McuCheckArgs, echo: &ConfigEcho) -> Result<(), CliError> {
    let mut registry = load_registry(a.profiles.as_deref())?
        .select(&a.profile)
        .map_err(invalid)?;
    if let Some(kib) = a.overhead_flash_kib {
        registry.overhead.flash_bytes = kib * KIB;
    }
    if let Some(kib) = a.overhead_ram_kib {
        registry.overhead.ram_bytes = kib * KIB;
    }
    let models = a
        .model
        .iter()
        .map(|p| load(p).map(|m| (p, m)))
        .collect::<Result<Vec<_>, _>>()?;
    let dir = run_dir(common, echo)?;
    let mut csv = String::from(
        "model,precision,profile,feasible,flash_ok,sram_ok,flash_needed_bytes,flash_bytes,ram_needed_bytes,sram_bytes,latency_ms,energy_mj\n",
    );
    let mut md = String::from(
        "| Model | Precision | MCU | Verdict | Flash (KiB) | RAM (KiB) | Latency (ms) | Energy (mJ) |\n|---|---|---|---|---:|---:|---:|---:|\n",
    );
    for (path, model) in &models {
        let size = fs::metadata(path).map(|m| m.len()).map_err(runtime)?;
        let layers = model.layers();
        let precision = model.precision();
        let macs = mac_count_layers(model.input_shape(), &layers);
        let arena = match model {
            ModelFile::Float(_) => {
                estimate_arena_layers(model.input_shape(), &layers, precision).bytes
            }
            ModelFile::Int8(q) => estimate_arena_quantized(q).bytes,
        };
        for p in &registry.profiles {
            let v = fits_on(size, arena, p, registry.overhead);
            let latency = estimate_latency(macs, precision, p, &registry.latency);
            let energy = estimate_energy(latency, p, precision);
            let verdict = if v.feasible() {
                "feasible"
            } else {
                "infeasible"
            };
            let mut why = Vec::new();
            if !v.flash_ok {
                why.push("flash");
            }
            if !v.sram_ok {
                why.push("RAM");
            }
            let reason = if why.is_empty() {
                String::new()
            } else {
                format!(" ({} exceeded)", why.join(", "))
            };
            println!(
                "{} [{}] on {}: {verdict}{reason}; flash {:.1}/{:.1} KiB, RAM {:.1}/{:.1} KiB, {:.2} ms, {:.3} mJ",
                path.display(),
                precision.as_str(),
                p.name,
                v.flash_needed as f64 / 1024.0,
                p.flash_bytes as f64 / 1024.0,
                v.arena_needed as f64 / 1024.0,
                p.sram_bytes as f64 / 1024.0,
                latency,
                energy,
            );
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                path.display(),
                precision.as_str(),
                p.name,
                v.feasible(),
                v.flash_ok,
                v.sram_ok,
                v.flash_needed,
                p.flash_bytes,
                v.arena_needed,
                p.sram_bytes,
                latency,
                energy
            );
            let _ = writeln!(
                md,
                "| {} | {} | {} | {verdict}{reason} | {:.1} / {:.1} | {:.1} / {:.1} | {:.2} | {:.3} |",
                path.file_name().map(|f| f.to_string_lossy()).unwrap_or_default(),
                precision.as_str(),
                p.name,
                v.flash_needed as f64 / 1024.0,
                p.flash_bytes as f64 / 1024.0,
                v.arena_needed as f64 / 1024.0,
                p.sram_bytes as f64 / 1024.0,
                latency,
                energy
            );
        }
    }
    write_file(&dir.join("mcu_check.csv"), csv)?;
    write_file(&dir.join("mcu_check.md"), md)?;
    Ok(())
}
