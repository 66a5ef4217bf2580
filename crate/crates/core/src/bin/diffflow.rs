use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffflow::checks::{self, Check};
use diffflow::metrics::write_csv;
use diffflow::sweep::{self, SweepReport};
use diffflow::{Error, ScenarioConfig, Scheme};

#[derive(Parser)]
#[command(
    name = "diffflow",
    version,
    about = "Load-balancing sweep harness: ECMP, RPS and DiffFlow"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scheme × load × seed sweep.
    Run {
        #[command(flatten)]
        common: Common,
        /// Skip runs whose output is already complete.
        #[arg(long)]
        resume: bool,
        /// Exit with status 3 if a result check fails.
        #[arg(long)]
        check: bool,
    },
    /// Evaluate the analytic model alone (M/D/1/K port inputs).
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Compare finished runs with the model fed by their measurements.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        check: bool,
    },
    /// Run every scheme over a workload dump.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Workload dump written by `run`.
        #[arg(long)]
        workload: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML scenario file; defaults reproduce the reference setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds, e.g. `1,2,3` or `1..5`.
    #[arg(long)]
    seeds: Option<String>,
    /// Loads, e.g. `0.1,0.5,0.8`.
    #[arg(long)]
    loads: Option<String>,
    /// Schemes, e.g. `ecmp,diffflow`.
    #[arg(long)]
    schemes: Option<String>,
    /// Concurrent runs (0 = all cores).
    #[arg(long)]
    parallelism: Option<usize>,
}

fn list<T: std::str::FromStr>(field: &str, text: &str) -> Result<Vec<T>, Error> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::config(field, format!("cannot parse `{s}`")))
        })
        .collect()
}

fn seeds(text: &str) -> Result<Vec<u64>, Error> {
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a
            .trim()
            .parse()
            .map_err(|_| Error::config("seeds", format!("bad range start `{a}`")))?;
        let b: u64 = b
            .trim()
            .parse()
            .map_err(|_| Error::config("seeds", format!("bad range end `{b}`")))?;
        if a > b {
            return Err(Error::config("seeds", "range end precedes start"));
        }
        return Ok((a..=b).collect());
    }
    list("seeds", text)
}

fn load_config(c: &Common) -> Result<ScenarioConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    if let Some(s) = &c.seeds {
        cfg.seeds = seeds(s)?;
    }
    if let Some(l) = &c.loads {
        cfg.loads = list("loads", l)?;
    }
    if let Some(s) = &c.schemes {
        cfg.schemes = list::<Scheme>("schemes", s)?;
    }
    if let Some(p) = c.parallelism {
        cfg.parallelism = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(report: &SweepReport) {
    println!(
        "{} runs executed, {} skipped, output in {}",
        report.cells_run,
        report.cells_skipped,
        report.out_dir.display()
    );
    for m in &report.missing {
        println!("missing run: {m}");
    }
}

fn print_checks(checks: &[Check]) -> bool {
    for c in checks {
        println!("{c}");
    }
    checks.iter().all(|c| c.passed)
}

enum Outcome {
    Ok,
    CheckFailed,
}

fn execute(cli: Cli) -> Result<Outcome, Error> {
    match cli.command {
        Command::Run { common, resume, check } => {
            let cfg = load_config(&common)?;
            let report = sweep::run_sweep(&cfg, resume)?;
            summarize(&report);
            if check && !print_checks(&checks::evaluate(&report.aggregate, &report.analysis)) {
                return Ok(Outcome::CheckFailed);
            }
        }
        Command::Analyze { common } => {
            let cfg = load_config(&common)?;
            let rows = sweep::analyze(&cfg)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("model.csv");
            write_csv(&rows, std::fs::File::create(&path)?)?;
            println!("{} model rows written to {}", rows.len(), path.display());
        }
        Command::Compare { common, check } => {
            let cfg = load_config(&common)?;
            let (rows, missing) = sweep::compare_analysis(&cfg)?;
            for m in &missing {
                println!("missing run: {m}");
            }
            println!(
                "{} comparison rows written to {}",
                rows.len(),
                cfg.output_dir.join("comparison.csv").display()
            );
            if check && !print_checks(&[checks::model_agreement(&rows)]) {
                return Ok(Outcome::CheckFailed);
            }
        }
        Command::Replay { common, workload } => {
            let cfg = load_config(&common)?;
            let report = sweep::replay(&cfg, &workload)?;
            summarize(&report);
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(3),
        Err(e @ (Error::Config { .. } | Error::Toml(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
