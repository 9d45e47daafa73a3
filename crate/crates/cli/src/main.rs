//! `desync`: run simulations and sweeps, export metrics, draw plots.

mod error;
mod svg;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use desync_core::analytics::{
    metric_series, metrics_csv, phase_space_window, summary, Metric, MetricSeries,
};
use desync_core::engine::{composite_breakdown, simulate, Trace};
use desync_core::model::{load_config, to_toml_string, validate, RunConfig, TraceDetail};
use desync_core::presets::{self, PRESETS};

use crate::error::CliError;
use crate::svg::Stamp;
use crate::sweep::SweepSpec;

#[derive(Parser)]
#[command(name = "desync", version, about = "Desynchronization simulator for bulk-synchronous programs")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and write its trace, metrics and summary.
    Run(RunArgs),
    /// Simulate one configuration per value of a sweep axis.
    Sweep(SweepArgs),
    /// Render a phase-space scatter or a timeline as SVG.
    Plot(PlotArgs),
    /// List or print the bundled presets.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Parse and validate a configuration without running it.
    Validate {
        /// Config file or `preset:NAME`.
        config: String,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset's TOML, or write it to `--output`.
    Emit {
        name: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    /// Replaces the run seed and the noise seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_enum)]
    trace_detail: Option<DetailArg>,
    /// Fraction of leading iterations left out of steady-state statistics.
    #[arg(long, default_value_t = 0.1)]
    warmup_cut: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetailArg {
    Summary,
    Full,
}

#[derive(Args)]
struct RunArgs {
    /// Config file or `preset:NAME`.
    config: String,
    #[arg(short, long, default_value = "out")]
    output: PathBuf,
    /// Also write the trace as JSON lines.
    #[arg(long)]
    jsonl: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep file with `base`, `axis` and `values`.
    sweep: PathBuf,
    #[arg(short, long, default_value = "out")]
    output: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    PhaseSpace,
    Timeline,
}

#[derive(Args)]
struct PlotArgs {
    /// Trace (`.csv` or `.jsonl`) or metric file written by `run`.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "phase-space")]
    kind: PlotKind,
    /// mpi_time, performance or bandwidth_utilization.
    #[arg(long, default_value = "mpi_time")]
    metric: String,
    /// Rank whose series a phase-space plot shows.
    #[arg(long, default_value_t = 0)]
    rank: usize,
    /// Iteration window as START,LEN.
    #[arg(long, value_parser = parse_window)]
    window: Option<(usize, usize)>,
    #[arg(short, long)]
    output: PathBuf,
    /// Leave out the generation-time comment.
    #[arg(long)]
    no_timestamp: bool,
}

fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected START,LEN")?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(a)?, num(b)?))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Plot(args) => plot(args),
        Command::Preset { action } => preset(action),
        Command::Validate { config } => {
            let cfg = load_source(&config, Path::new("."))?;
            println!(
                "ok: {} ranks, {} iterations, {} phases, config_hash={}",
                cfg.num_ranks,
                cfg.num_iterations,
                cfg.program.len(),
                cfg.config_hash()
            );
            Ok(())
        }
    }
}

/// `preset:NAME` or a config path, relative paths resolved against `dir`.
fn load_source(source: &str, dir: &Path) -> Result<RunConfig, CliError> {
    if let Some(name) = source.strip_prefix("preset:") {
        return Ok(presets::load(name)?);
    }
    let path = dir.join(source);
    load_config(&path).map_err(|e| match e.path() {
        Some(_) => CliError::Config(format!("{}: {e}", path.display())),
        None => CliError::Config(e.to_string()),
    })
}

fn apply(mut cfg: RunConfig, o: &Overrides) -> Result<RunConfig, CliError> {
    if !(0.0..1.0).contains(&o.warmup_cut) {
        return Err(CliError::Usage("--warmup-cut must lie in [0, 1)".into()));
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
        cfg.noise.seed = seed;
    }
    if let Some(n) = o.iterations {
        cfg.num_iterations = n;
    }
    if let Some(d) = o.trace_detail {
        cfg.trace_detail = match d {
            DetailArg::Summary => TraceDetail::Summary,
            DetailArg::Full => TraceDetail::Full,
        };
    }
    Ok(validate(cfg)?)
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))
}

fn stamped_config(cfg: &RunConfig) -> String {
    format!(
        "# config_hash={} seed={}\n{}",
        cfg.config_hash(),
        cfg.seed,
        to_toml_string(cfg)
    )
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let cfg = apply(load_source(&args.config, Path::new("."))?, &args.overrides)?;
    let trace = simulate(&cfg)?;
    let s = summary(&trace, &composite_breakdown(&cfg)?, args.overrides.warmup_cut);
    let out = &args.output;
    create_dir(out)?;
    write(&out.join("config.toml"), &stamped_config(&cfg))?;
    write(&out.join("trace.csv"), &trace.to_csv())?;
    if args.jsonl {
        write(&out.join("trace.jsonl"), &trace.to_jsonl())?;
    }
    if cfg.trace_detail == TraceDetail::Full {
        write(&out.join("phases.csv"), &trace.phases_csv())?;
    }
    for m in [Metric::MpiTime, Metric::Performance, Metric::BandwidthUtilization] {
        write(&out.join(format!("metrics_{}.csv", m.name())), &metrics_csv(&trace, m))?;
    }
    write(&out.join("summary.txt"), &s.to_table())?;
    write(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&s).expect("summary serializes"),
    )?;
    print!("{}", s.to_table());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let spec = SweepSpec::load(&args.sweep, |source, dir| {
        apply(load_source(source, dir)?, &args.overrides)
    })?;
    let results = sweep::run(&spec, args.overrides.warmup_cut)?;
    let out = &args.output;
    create_dir(out)?;
    write(&out.join("sweep.csv"), &sweep::to_csv(&spec, &results))?;
    for (i, r) in results.iter().enumerate() {
        write(&out.join(format!("point-{i}.summary.txt")), &r.summary.to_table())?;
    }
    print!("{}", sweep::to_table(&spec, &results));
    Ok(())
}

/// Trace metadata and per-rank series of one metric.
struct PlotInput {
    config_hash: String,
    seed: u64,
    series: Vec<MetricSeries>,
}

fn read_plot_input(path: &Path, metric: Metric) -> Result<PlotInput, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let context = |e: CliError| CliError::Config(format!("{}: {e}", path.display()));
    if text.trim_start().starts_with('{') {
        return from_trace(Trace::from_jsonl(&text)?, metric);
    }
    if text.lines().nth(1).is_some_and(|l| l.starts_with("iteration,rank,value")) {
        return from_metric_file(&text, metric).map_err(context);
    }
    from_trace(Trace::from_csv(&text)?, metric)
}

fn from_trace(trace: Trace, metric: Metric) -> Result<PlotInput, CliError> {
    let series = (0..trace.num_ranks())
        .map(|r| metric_series(&trace, r, metric))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PlotInput {
        config_hash: trace.meta.config_hash.clone(),
        seed: trace.meta.seed,
        series,
    })
}

fn from_metric_file(text: &str, metric: Metric) -> Result<PlotInput, CliError> {
    let header = text.lines().next().unwrap_or_default();
    let field = |key: &str| {
        header
            .split_whitespace()
            .find_map(|t| t.strip_prefix(key).map(str::to_string))
            .ok_or_else(|| CliError::Config(format!("line 1: missing `{key}`")))
    };
    let config_hash = field("config_hash=")?;
    let seed = field("seed=")?
        .parse()
        .map_err(|e| CliError::Config(format!("line 1: seed: {e}")))?;
    let file_metric: Metric = field("metric=")?.parse()?;
    if file_metric != metric {
        return Err(CliError::Usage(format!(
            "file holds {} but --metric {} was requested",
            file_metric.name(),
            metric.name()
        )));
    }
    let mut series: Vec<MetricSeries> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(2) {
        let bad = |reason: String| CliError::Config(format!("line {}: {reason}", i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", f.len())));
        }
        let rank: usize = f[1].parse().map_err(|e| bad(format!("rank: {e}")))?;
        let value: f64 = f[2].parse().map_err(|e| bad(format!("value: {e}")))?;
        if rank == series.len() {
            series.push(MetricSeries {
                rank,
                metric,
                values: Vec::new(),
            });
        }
        match series.get_mut(rank) {
            Some(s) => s.values.push(value),
            None => return Err(bad(format!("rank {rank} out of order"))),
        }
    }
    Ok(PlotInput {
        config_hash,
        seed,
        series,
    })
}

fn plot(args: PlotArgs) -> Result<(), CliError> {
    let metric: Metric = args.metric.parse()?;
    let input = read_plot_input(&args.input, metric)?;
    let timestamp = (!args.no_timestamp).then(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let stamp = Stamp {
        config_hash: &input.config_hash,
        seed: input.seed,
        timestamp,
    };
    let len = input.series.first().map_or(0, |s| s.values.len());
    let (start, count) = args.window.unwrap_or((0, len));
    let svg = match args.kind {
        PlotKind::PhaseSpace => {
            let series = input.series.get(args.rank).ok_or_else(|| {
                CliError::Usage(format!("rank {} out of range for {} ranks", args.rank, input.series.len()))
            })?;
            let ps = phase_space_window(series, start, count)?;
            svg::phase_space(&ps, metric.name(), &stamp)
        }
        PlotKind::Timeline => {
            let end = start.saturating_add(count).min(len);
            if start >= end {
                return Err(CliError::Usage(format!("window starts at {start} but the series has {len} iterations")));
            }
            let p = input.series.len() as f64;
            let (mut mean, mut std) = (Vec::new(), Vec::new());
            for i in start..end {
                let m = input.series.iter().map(|s| s.values[i]).sum::<f64>() / p;
                let var = input.series.iter().map(|s| (s.values[i] - m).powi(2)).sum::<f64>() / p;
                mean.push(m);
                std.push(var.sqrt());
            }
            svg::timeline(start, &mean, &std, metric.name(), &stamp)
        }
    };
    write(&args.output, &svg)
}

fn preset(action: PresetAction) -> Result<(), CliError> {
    match action {
        PresetAction::List => {
            for p in &PRESETS {
                println!("{:<12} {}", p.name, p.summary);
            }
            Ok(())
        }
        PresetAction::Emit { name, output } => {
            let p = presets::get(&name).ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
                CliError::Usage(format!("no preset `{name}` (available: {})", names.join(", ")))
            })?;
            match output {
                Some(path) => write(&path, p.text),
                None => {
                    print!("{}", p.text);
                    Ok(())
                }
            }
        }
    }
}
