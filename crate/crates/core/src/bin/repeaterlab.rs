use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use repeaterlab::chart::{render, ChartKind};
use repeaterlab::config::{load_config, ConfigFile};
use repeaterlab::experiments::{
    fit_min_repeaters, run_sweep, ExperimentResult, MinRepeaters, SweepKind, SweepSpec,
};
use repeaterlab::report::{
    read_results, write_results, write_summary, write_trace, SweepSummary,
};
use repeaterlab::stats::RegressionFit;

const SEED_ENV: &str = "REPEATERLAB_SEED";

#[derive(Parser)]
#[command(name = "repeaterlab", version, about = "Linear quantum repeater chain simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run sweeps from a config file and write CSV and JSON results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Sweep to run; repeat for several. Defaults to every sweep.
        #[arg(long = "sweep")]
        sweeps: Vec<String>,
        /// Output directory; overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed; overrides REPEATERLAB_SEED and the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write control-message traces as JSON lines.
        #[arg(long)]
        trace: bool,
    },
    /// Find the minimum repeater count for each distance of a sweep.
    MinRepeaters {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated total distances; defaults to the sweep's own grid.
        #[arg(long, value_delimiter = ',')]
        distances: Vec<f64>,
        /// Sweep supplying profile and settings. Defaults to the first
        /// min_repeater_search sweep in the config.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw an SVG chart from a results CSV.
    Chart {
        #[arg(long)]
        input: PathBuf,
        /// rate_vs_nodes, fidelity_vs_distance or min_repeaters_vs_distance
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config file without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

type CliResult = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn seed_override(flag: Option<u64>) -> Result<Option<u64>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn resolve(cfg: &ConfigFile, names: &[String], seed: Option<u64>) -> Result<Vec<SweepSpec>, Failure> {
    let names: Vec<String> = if names.is_empty() {
        cfg.sweep_names().map(str::to_string).collect()
    } else {
        names.to_vec()
    };
    if names.is_empty() {
        return Err(usage("config defines no sweeps"));
    }
    names.iter().map(|n| cfg.sweep(n, seed).map_err(usage)).collect()
}

fn min_repeaters_fit(results: &[ExperimentResult]) -> Option<RegressionFit> {
    let found: Vec<MinRepeaters> = results
        .iter()
        .map(|r| MinRepeaters {
            distance_km: r.total_distance_km,
            repeaters: (r.e_count >= 1).then(|| r.router_count - 2),
            result: r.clone(),
        })
        .collect();
    fit_min_repeaters(&found).ok()
}

fn execute(spec: &SweepSpec, out: &Path, trace: bool) -> Result<Vec<ExperimentResult>, Failure> {
    eprintln!(
        "running {} ({}, profile {}, seed {})",
        spec.name,
        spec.kind.label(),
        spec.profile,
        spec.base_seed
    );
    let mut spec = spec.clone();
    spec.trace = trace;
    let results = run_sweep(&spec);
    std::fs::create_dir_all(out).map_err(runtime)?;
    write_results(&results, &out.join(format!("{}.csv", spec.name))).map_err(runtime)?;
    let mut summary = SweepSummary::new(&spec.name, spec.base_seed, &results);
    if spec.kind == SweepKind::MinRepeaterSearch {
        summary.min_repeaters_fit = min_repeaters_fit(&results);
    }
    write_summary(&summary, &out.join(format!("{}.summary.json", spec.name))).map_err(runtime)?;
    if trace {
        write_trace(&results, &out.join(format!("{}.trace.jsonl", spec.name))).map_err(runtime)?;
    }
    if let Some(e) = results.iter().find_map(|r| r.error.as_ref()) {
        return Err(runtime(format!("sweep {}: {e}", spec.name)));
    }
    Ok(results)
}

fn main_inner(cli: Cli) -> CliResult {
    match cli.command {
        Command::Run {
            config,
            sweeps,
            out,
            seed,
            trace,
        } => {
            let cfg = load_config(&config).map_err(usage)?;
            let specs = resolve(&cfg, &sweeps, seed_override(seed)?)?;
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            for spec in &specs {
                let results = execute(spec, &out, trace)?;
                let successes: usize = results.iter().map(|r| r.e_count).sum();
                let attempts: usize = results.iter().map(|r| r.attempts).sum();
                println!("{}: {} rows, {successes}/{attempts} attempts succeeded", spec.name, results.len());
            }
            Ok(())
        }
        Command::MinRepeaters {
            config,
            distances,
            sweep,
            out,
            seed,
        } => {
            let cfg = load_config(&config).map_err(usage)?;
            let name = match sweep {
                Some(n) => n,
                None => cfg
                    .sweeps
                    .iter()
                    .find(|(_, s)| s.kind == SweepKind::MinRepeaterSearch)
                    .map(|(n, _)| n.clone())
                    .ok_or_else(|| usage("config has no min_repeater_search sweep; pass --sweep"))?,
            };
            let mut spec = cfg.sweep(&name, seed_override(seed)?).map_err(usage)?;
            spec.kind = SweepKind::MinRepeaterSearch;
            if !distances.is_empty() {
                spec.distances_km = distances;
            }
            spec.validate().map_err(usage)?;
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            let results = execute(&spec, &out, false)?;
            println!("distance_km,replicate,min_repeaters");
            for r in &results {
                let m = if r.e_count >= 1 {
                    (r.router_count - 2).to_string()
                } else {
                    "none".to_string()
                };
                println!("{},{},{m}", r.total_distance_km, r.replicate);
            }
            if let Some(fit) = min_repeaters_fit(&results) {
                println!(
                    "fit: repeaters = {:.6e} * distance_km + {:.4} (r2 {:.4}, {:.1} km per repeater)",
                    fit.slope,
                    fit.intercept,
                    fit.r_squared,
                    1.0 / fit.slope
                );
            }
            Ok(())
        }
        Command::Chart { input, kind, out } => {
            let kind = ChartKind::from_label(&kind).map_err(usage)?;
            let rows = read_results(&input).map_err(usage)?;
            let svg = render(kind, &rows).map_err(usage)?;
            std::fs::write(&out, svg).map_err(runtime)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config).map_err(usage)?;
            for name in cfg.sweep_names() {
                let s = cfg.sweep(name, None).map_err(usage)?;
                println!(
                    "{name}: {} on {}, {} configurations x {} replicates",
                    s.kind.label(),
                    s.profile,
                    s.configurations().len(),
                    s.replicates
                );
            }
            println!("config ok");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
