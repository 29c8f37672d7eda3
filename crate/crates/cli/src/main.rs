use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pssim_core::harness::{
    run_experiment, sweep, write_run, Backend, ExperimentConfig, Protocol, RunStatus, SweepAxis,
};
use pssim_core::staleness::measure_staleness;
use pssim_core::straggler::{
    arrival_stats_from_records, best_config, kth_arrival_stats, ArrivalStats, IterationsCurve,
    LatencySource, DEFAULT_MC_ITERATIONS,
};
use pssim_core::trace::{validate_trace, AggregationCheck, EventTrace};
use pssim_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_INVALID: u8 = 4;

/// Parameter-server SGD experiments: simulate or run async/sync training,
/// and analyse staleness and stragglers.
#[derive(Parser)]
#[command(name = "pssim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Sim,
    Concurrent,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML). Defaults apply to anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = self.backend {
            cfg.backend = match b {
                BackendArg::Sim => Backend::Sim,
                BackendArg::Concurrent => Backend::Concurrent,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// One run: writes config.toml, metrics.csv, trace.jsonl and summary.json.
    Train(RunArgs),
    /// One run per value of a config key; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Dotted config key, e.g. `schedule.gamma0`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
    /// Per-layer staleness table (layer,min,mean,median,max,std_dev,count)
    /// from a trace, or from a fresh run of the config.
    StalenessReport {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// k-th arrival statistics, their CDFs, and the best (N, b) split of the
    /// same machines.
    StragglerReport {
        #[command(flatten)]
        run: RunArgs,
        /// Sync trace to analyse instead of simulating the config.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Comma-separated k values; all of 1..=N+b by default.
        #[arg(long)]
        ks: Option<String>,
        /// Iterations curve as `N:iterations` pairs.
        #[arg(long, default_value = "50:137500,100:76200")]
        curve: String,
    },
    /// Estimated running time of every (N, b) split of `total` machines.
    BestConfig {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        total: usize,
        #[arg(long, default_value = "50:137500,100:76200")]
        curve: String,
        #[arg(long, default_value_t = DEFAULT_MC_ITERATIONS)]
        mc_iterations: usize,
    },
    /// Checks a JSONL trace against the protocol invariants.
    ValidateTrace {
        #[arg(long)]
        trace: PathBuf,
        /// Required gradients per sync iteration, or `any` for timeout
        /// collection; inferred from the first iteration when omitted.
        #[arg(long)]
        aggregate: Option<String>,
    },
}

fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| anyhow::anyhow!("cannot parse `{s}`")))
        .collect()
}

fn parse_curve(text: &str) -> Result<IterationsCurve> {
    let mut samples = Vec::new();
    for pair in text.split(',') {
        let (n, it) = pair
            .split_once(':')
            .with_context(|| format!("curve entry `{pair}` is not N:iterations"))?;
        samples.push((n.trim().parse()?, it.trim().parse()?));
    }
    Ok(IterationsCurve::new(samples)?)
}

fn status_code(status: RunStatus) -> u8 {
    match status {
        RunStatus::Completed => 0,
        RunStatus::Diverged | RunStatus::Aborted => EXIT_DIVERGED,
    }
}

fn train(args: &RunArgs) -> Result<u8> {
    let cfg = args.config()?;
    let out = run_experiment(&cfg)?;
    let dir = args.out_dir()?;
    write_run(dir, &cfg, &out)?;
    print!("{}", fs::read_to_string(dir.join("summary.json"))?);
    Ok(status_code(out.status))
}

fn run_sweep(args: &RunArgs, param: &str, values: &str) -> Result<u8> {
    let cfg = args.config()?;
    let axis = SweepAxis::parse(param, values)?;
    let table = sweep(&cfg, &axis);
    let dir = args.out_dir()?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    table.write_csv(fs::File::create(dir.join("sweep.csv"))?)?;
    table.write_csv(std::io::stdout())?;
    Ok(0)
}

fn staleness_report(args: &RunArgs, trace: Option<&Path>) -> Result<u8> {
    let trace = match trace {
        Some(p) => EventTrace::load(p)?,
        None => {
            let mut cfg = args.config()?;
            cfg.record_trace = true;
            run_experiment(&cfg)?.trace
        }
    };
    let stats = measure_staleness(&trace)?;
    stats.write_csv(fs::File::create(args.out_dir()?.join("staleness.csv"))?)?;
    print!("{}", stats.to_csv());
    if stats.unresolved_sends > 0 || stats.dropped > 0 {
        println!("# unresolved sends: {}, dropped: {}", stats.unresolved_sends, stats.dropped);
    }
    Ok(0)
}

fn straggler_report(args: &RunArgs, trace: Option<&Path>, ks: Option<&str>, curve: &str) -> Result<u8> {
    let curve = parse_curve(curve)?;
    let (stats, total) = match trace {
        Some(p) => {
            let trace = EventTrace::load(p)?;
            let probe = kth_arrival_stats(&trace, &[1])?;
            let ks = match ks {
                Some(list) => parse_list(list)?,
                None => (1..=probe.total_workers).collect(),
            };
            (kth_arrival_stats(&trace, &ks)?, probe.total_workers)
        }
        None => {
            let mut cfg = args.config()?;
            if cfg.protocol != Protocol::Sync {
                bail!(Error::Config("straggler-report simulates sync configs".into()));
            }
            cfg.record_trace = false;
            let total = cfg.total_workers();
            let ks = match ks {
                Some(list) => parse_list(list)?,
                None => (1..=total).collect(),
            };
            let out = run_experiment(&cfg)?;
            (arrival_stats_from_records(&out.iterations, total, &ks)?, total)
        }
    };
    let dir = args.out_dir()?;
    stats.write_csv(fs::File::create(dir.join("arrivals.csv"))?)?;
    stats.write_cdf_csv(fs::File::create(dir.join("arrival_cdf.csv"))?)?;
    stats.write_csv(std::io::stdout())?;
    write_best(dir, total, &curve, &LatencySource::Arrivals(stats_for_all(stats)?), 0, 0)?;
    Ok(0)
}

fn stats_for_all(stats: ArrivalStats) -> Result<ArrivalStats> {
    let ks: Vec<usize> = (1..=stats.total_workers).collect();
    Ok(ArrivalStats::from_offsets(stats.total_workers, stats.iterations, &ks)?)
}

fn write_best(dir: &Path, total: usize, curve: &IterationsCurve, source: &LatencySource, mc: usize, seed: u64) -> Result<()> {
    match best_config(total, curve, source, mc, seed) {
        Ok(est) => {
            est.write_csv(fs::File::create(dir.join("best_config.csv"))?)?;
            println!(
                "best split of {total}: N={} b={} est_total_time={}",
                est.best.n, est.best.b, est.best.est_total_time
            );
        }
        Err(e) => println!("# no best-config table: {e}"),
    }
    Ok(())
}

fn run_best_config(args: &RunArgs, total: usize, curve: &str, mc: usize) -> Result<u8> {
    let cfg = args.config()?;
    let curve = parse_curve(curve)?;
    let est = best_config(total, &curve, &LatencySource::Model(cfg.latency.clone()), mc, cfg.seed)?;
    est.write_csv(fs::File::create(args.out_dir()?.join("best_config.csv"))?)?;
    est.write_csv(std::io::stdout())?;
    println!(
        "best split of {total}: N={} b={} est_total_time={}",
        est.best.n, est.best.b, est.best.est_total_time
    );
    Ok(0)
}

fn validate(trace: &Path, aggregate: Option<&str>) -> Result<u8> {
    let check = match aggregate {
        None => AggregationCheck::Infer,
        Some("any") => AggregationCheck::Any,
        Some(n) => AggregationCheck::Exactly(
            n.parse().with_context(|| format!("--aggregate expects a count or `any`, got `{n}`"))?,
        ),
    };
    let trace = EventTrace::load(trace)?;
    let r = validate_trace(&trace, check);
    println!(
        "protocol={:?} reads={} sends={} applies={} drops={} iterations={} max_staleness={}",
        r.protocol, r.reads, r.sends, r.applies, r.drops, r.iterations, r.max_staleness
    );
    for v in &r.violations {
        println!("violation: {v}");
    }
    if r.is_ok() {
        println!("ok");
        Ok(0)
    } else {
        println!("{} violation(s)", r.violations.len());
        Ok(EXIT_INVALID)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => train(args),
        Command::Sweep { run, param, values } => run_sweep(run, param, values),
        Command::StalenessReport { run, trace } => staleness_report(run, trace.as_deref()),
        Command::StragglerReport { run, trace, ks, curve } => {
            straggler_report(run, trace.as_deref(), ks.as_deref(), curve)
        }
        Command::BestConfig { run, total, curve, mc_iterations } => {
            run_best_config(run, *total, curve, *mc_iterations)
        }
        Command::ValidateTrace { trace, aggregate } => validate(trace, aggregate.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
