use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ermu::error::Error;
use ermu::harness::run::FileDiagnostic;
use ermu::harness::selftest::run_selftest;
use ermu::harness::{report_directory, run_campaign, ExperimentConfig};
use ermu::suite::ReportConfig;

#[derive(Parser)]
#[command(name = "ermu", version, about = "Gaussian universality testbench for regularized ERM")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "ERMU_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Summarize the trial CSVs in a directory.
    Report {
        dir: PathBuf,
        /// Where to write the report (defaults to DIR).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Quick property checks at small sizes.
    Selftest,
}

enum Failure {
    Config(Error),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::ConfigSyntax(_) => Failure::Config(e),
            other => Failure::Other(other.to_string()),
        }
    }
}

fn run(config: PathBuf, out: Option<PathBuf>, seed_override: Option<u64>) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(seed) = seed_override {
        cfg.master_seed = seed;
    }
    if let Some(out) = out {
        cfg.output_dir = Some(out);
    }
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("ermu-out"));
    let summary = run_campaign(&cfg, &out)?;
    println!("{} trials written to {}", summary.trials, out.display());
    for f in &summary.files {
        println!("  {f}");
    }
    if summary.quarantined.is_empty() {
        println!("quarantined: none");
    } else {
        println!("quarantined: {}", summary.quarantined.len());
        for q in &summary.quarantined {
            println!("  {q}");
        }
    }
    for e in &summary.diagnostic_errors {
        println!("diagnostic error: {e}");
    }
    Ok(())
}

fn report(dir: PathBuf, out: Option<PathBuf>, resamples: usize, seed: u64) -> Result<(), Failure> {
    let out = out.unwrap_or_else(|| dir.clone());
    let cfg = ReportConfig { resamples, seed, ..ReportConfig::default() };
    let report = report_directory(&dir, &out, &cfg).map_err(|problems: Vec<FileDiagnostic>| {
        let lines: Vec<String> = problems.iter().map(|p| format!("{}: {}", p.file.display(), p.message)).collect();
        Failure::Other(lines.join("\n"))
    })?;
    for fam in &report.families {
        let verdict = if fam.trend.universality_holds { "holds" } else { "not supported" };
        println!("{}: universality {verdict}", fam.family);
        for s in &fam.sizes {
            let flag = if s.degenerate_ci { " (degenerate CI)" } else { "" };
            println!(
                "  n={} trials={} train gap {:.3e} [{:.3e}, {:.3e}]{flag}",
                s.n, s.trials, s.train_gap.estimate, s.train_gap.lower, s.train_gap.upper
            );
        }
        if let Some(v) = &fam.null_calibration {
            println!("  null calibration: {v:?}");
        }
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn selftest() -> Result<(), Failure> {
    let checks = run_selftest();
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<24} {:>7.2}s  {}", c.name, c.seconds, c.detail);
    }
    match checks.iter().filter(|c| !c.passed).count() {
        0 => Ok(()),
        k => Err(Failure::Other(format!("{k} selftest check(s) failed"))),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Run { config, out, seed_override } => run(config, out, seed_override),
        Command::Report { dir, out, resamples, seed } => report(dir, out, resamples, seed),
        Command::Selftest => selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
