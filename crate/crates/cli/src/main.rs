//! `qmpe`: exact quench curves, simulated randomized measurements, shadow
//! estimates and crossing reports.

mod commands;
mod config;
mod error;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "qmpe",
    version,
    about = "Entanglement-asymmetry quench simulator and shadow estimator"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; its keys override the preset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in preset: xy, disorder-weak, disorder-strong, dephasing, four-qubit.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", env = "QMPE_OUT")]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "K", env = "QMPE_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact EA and FD curves (oracle.csv).
    Simulate,
    /// Simulated randomized-measurement datasets (datasets/*.rmds).
    Measure,
    /// Shadow estimates from datasets (estimate.csv).
    Estimate {
        /// Dataset files or directories of *.rmds files.
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        /// Also estimate the Frobenius distance to the diagonal ensemble
        /// computed from the configuration's model.
        #[arg(long)]
        de: bool,
        /// Oracle CSV to compare against.
        #[arg(long, value_name = "CSV")]
        oracle: Option<PathBuf>,
    },
    /// Crossing times and verdicts from result tables (report.json).
    Report {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        /// Significance threshold in combined standard errors.
        #[arg(long, value_name = "K")]
        sigma: Option<f64>,
        /// Latest crossing time counted [s].
        #[arg(long, value_name = "SECONDS")]
        window: Option<f64>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = config::load(common.preset.as_deref(), common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn output_dir(common: &Common, cfg: Option<&RunConfig>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = &cli.common;
    if let Some(k) = common.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be ≥ 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate => {
            let cfg = load_config(common)?;
            let out = output_dir(common, Some(&cfg));
            let path = commands::simulate(&cfg, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Measure => {
            let cfg = load_config(common)?;
            let out = output_dir(common, Some(&cfg));
            let paths = commands::measure(&cfg, &out)?;
            println!(
                "wrote {} datasets to {}",
                paths.len(),
                out.join("datasets").display()
            );
        }
        Command::Estimate {
            datasets,
            de,
            oracle,
        } => {
            let cfg = load_config(common)?;
            let out = output_dir(common, Some(&cfg));
            let res = commands::estimate(&cfg, datasets, *de, &out)?;
            println!("wrote {}", res.path.display());
            if let Some(path) = oracle {
                let (_, rows) = table::load(path)?;
                let c = commands::cross_check(&res.rows, &rows);
                if c.matched == 0 {
                    return Err(CliError::Data(format!(
                        "{}: no points in common with the estimates",
                        path.display()
                    )));
                }
                print!(
                    "cross-check: {} points, max |estimate − oracle|/σ = {:.2} (EA), {}/{} within 3σ",
                    c.matched, c.max_ea_pull, c.within_3_sigma, c.matched
                );
                match c.max_fd_pull {
                    Some(p) => println!(", max FD pull {p:.2}"),
                    None => println!(),
                }
            }
        }
        Command::Report {
            tables,
            sigma,
            window,
        } => {
            let cfg = if common.preset.is_some() || common.config.is_some() {
                Some(load_config(common)?)
            } else {
                None
            };
            let mut rule = cfg
                .as_ref()
                .map(RunConfig::crossing_rule)
                .unwrap_or_default();
            if let Some(k) = sigma {
                if !(k.is_finite() && *k >= 0.0) {
                    return Err(CliError::Config("--sigma must be ≥ 0".into()));
                }
                rule.sigma_multiplier = *k;
            }
            let window = window.or(cfg.as_ref().and_then(|c| c.report.window));
            let mut rows = Vec::new();
            for path in tables {
                rows.extend(table::load(path)?.1);
            }
            let groups = commands::report(&rows, rule, window)?;
            print!("{}", commands::format_report(&groups));
            let out = output_dir(common, cfg.as_ref());
            write_json(&out, &groups)?;
        }
    }
    Ok(())
}

fn write_json(out: &Path, groups: &[commands::GroupReport]) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out.display(), e))?;
    let path = out.join("report.json");
    let json = serde_json::to_string_pretty(groups).expect("report serializes");
    std::fs::write(&path, json + "\n").map_err(|e| CliError::io(path.display(), e))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qmpe: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
