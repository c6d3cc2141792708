//! `randmedia`: config-driven experiment runner.

mod config;
mod report;
mod runner;
mod suites;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::report::Report;

#[derive(Parser)]
#[command(name = "randmedia", version = report_version(), about = "Random walks in random media: experiments and diagnostics")]
struct Cli {
    /// Directory for reports and CSV series.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the master seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML file or a built-in suite id.
    Run { config: String },
    /// Check a config without running it.
    Validate { config: String },
    /// List the built-in acceptance suites.
    Suites {
        /// Write each suite config as `<id>.toml` into this directory.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
}

fn report_version() -> &'static str {
    Box::leak(report::version().into_boxed_str())
}

/// Exit codes: 0 success, 1 diagnostic failure or runtime error, 2 invalid config.
const EXIT_DIAGNOSTIC: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = randmedia::par::configure_threads(n) {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = match &cli.command {
        Command::Run { config } => run(&cli, config),
        Command::Validate { config } => validate(&cli, config),
        Command::Suites { dump } => suites(dump.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DIAGNOSTIC)
        }
    }
}

/// Config text and a stem for output file names.
fn load(source: &str) -> Result<(String, String)> {
    let path = Path::new(source);
    if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {source}"))?;
        let stem = path.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
        return Ok((text, stem));
    }
    match suites::find(source.strip_prefix("suite:").unwrap_or(source)) {
        Some(s) => Ok((s.config.to_string(), s.id.to_string())),
        None => bail!("{source}: no such file or built-in suite"),
    }
}

fn parse(cli: &Cli, source: &str) -> Result<std::result::Result<(ExperimentConfig, String), ExitCode>> {
    let (text, stem) = load(source)?;
    match config::parse(&text) {
        Ok(mut cfg) => {
            if let Some(s) = cli.seed {
                cfg.seed = Some(s);
            }
            Ok(Ok((cfg, stem)))
        }
        Err(e) => {
            eprintln!("{source}: parse error: {e}");
            Ok(Err(ExitCode::from(EXIT_CONFIG)))
        }
    }
}

fn print_issues(source: &str, issues: &[config::Issue]) {
    for i in issues {
        eprintln!("{source}: {i}");
    }
}

fn validate(cli: &Cli, source: &str) -> Result<ExitCode> {
    let (cfg, _) = match parse(cli, source)? {
        Ok(c) => c,
        Err(code) => return Ok(code),
    };
    let issues = cfg.validate();
    if issues.is_empty() {
        println!("{source}: ok");
        Ok(ExitCode::SUCCESS)
    } else {
        print_issues(source, &issues);
        Ok(ExitCode::from(EXIT_CONFIG))
    }
}

fn run(cli: &Cli, source: &str) -> Result<ExitCode> {
    let (cfg, stem) = match parse(cli, source)? {
        Ok(c) => c,
        Err(code) => return Ok(code),
    };
    let prepared = match cfg.prepare() {
        Ok(p) => p,
        Err(issues) => {
            print_issues(source, &issues);
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let t0 = Instant::now();
    let outcome = runner::run(&cfg, &prepared)?;
    let report = Report::new(&cfg, outcome.results, outcome.diagnostics, t0.elapsed().as_secs_f64());
    let json = report.to_json();
    let target = cli.out.as_ref().map(|d| d.join(format!("{stem}.json"))).or_else(|| cfg.output.clone());
    match &target {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(path, &json).with_context(|| format!("writing {}", path.display()))?;
            let dir = path.parent().unwrap_or(Path::new("."));
            for (name, csv) in &outcome.series {
                fs::write(dir.join(format!("{stem}_{name}")), csv)?;
            }
            eprintln!("report written to {}", path.display());
        }
        None => print!("{json}"),
    }
    for d in &report.diagnostics {
        eprintln!("{} {}: {}", if d.passed { "PASS" } else { "FAIL" }, d.name, d.detail);
    }
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(EXIT_DIAGNOSTIC) })
}

fn suites(dump: Option<&Path>) -> Result<ExitCode> {
    if let Some(dir) = dump {
        fs::create_dir_all(dir)?;
    }
    for s in suites::SUITES {
        let kind = config::parse(s.config).map(|c| c.kind).map_err(anyhow::Error::msg)?;
        println!("{:<30} {:<18} {}", s.id, serde_json::to_value(kind)?.as_str().unwrap_or(""), s.title);
        if let Some(dir) = dump {
            fs::write(dir.join(format!("{}.toml", s.id)), s.config)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
