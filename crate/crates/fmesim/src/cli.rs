//! `fmesim` command line. Exit codes: 0 success, 1 usage or scenario error,
//! 2 failure while running.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use thiserror::Error;

use crate::config::{parse_f64_list, ConfigError, ScenarioConfig};
use crate::experiments::{run_fig6, run_fig7, summarize_fig6, summarize_fig7, throughput_rows};
use crate::output::{write_d2d, write_summary, write_throughput, write_trace, Summary};

#[derive(Debug, Parser)]
#[command(name = "fmesim", version, about = "Disaster-resilient LTE simulator: virtualized-EPC base stations and D2D beaconing")]
pub struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run both experiments a scenario describes.
    Run(RunArgs),
    /// Multi-round cell throughput.
    Fig6(RunArgs),
    /// Beacon-reception Monte Carlo.
    Fig7(Fig7Args),
    /// Check a scenario file without running it.
    Validate {
        scenario: PathBuf,
        #[arg(long)]
        paper_scale: bool,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file (TOML). Omitted keys take their defaults.
    pub scenario: Option<PathBuf>,
    /// Root seed. Required: there is no time-based default.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "FMESIM_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Full-size scenario instead of the desk-scale defaults.
    #[arg(long)]
    pub paper_scale: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub drops: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Fig7Args {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub drops: Option<usize>,
    /// Comma list, e.g. `0.8,0.92`.
    #[arg(long)]
    pub phi: Option<String>,
    /// `start:stop:step` or a comma list.
    #[arg(long)]
    pub q: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn keys_help() -> String {
    let mut s = String::from("Scenario keys and their desk-scale defaults:\n");
    for k in ScenarioConfig::documented_keys(false) {
        s.push_str("  ");
        s.push_str(&k);
        s.push('\n');
    }
    s
}

fn command() -> clap::Command {
    let keys = keys_help();
    let mut cmd = Cli::command().after_long_help(keys.clone());
    for name in ["run", "fig6", "fig7", "validate"] {
        let keys = keys.clone();
        cmd = cmd.mut_subcommand(name, |c| c.after_long_help(keys));
    }
    cmd
}

/// Parses and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match command().try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load(common: &Common) -> Result<ScenarioConfig, CliError> {
    Ok(match &common.scenario {
        Some(p) => ScenarioConfig::load(p, common.paper_scale)?,
        None => ScenarioConfig::base(common.paper_scale),
    })
}

fn need_seed(common: &Common) -> Result<u64, CliError> {
    common.seed.ok_or_else(|| CliError::Usage("--seed is required (there is no default seed)".into()))
}

fn out_dir(p: &Path) -> Result<&Path, CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", p.display())))?;
    Ok(p)
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn invalid(cfg: &ScenarioConfig) -> Result<(), CliError> {
    cfg.validate().map_err(|e| CliError::Config(ConfigError::Invalid(e, "command line".into())))
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Validate { scenario, paper_scale } => {
            ScenarioConfig::load(&scenario, paper_scale)?;
            println!("{}: ok", scenario.display());
            Ok(())
        }
        Command::Run(a) => run_experiments(&a, true, true),
        Command::Fig6(a) => run_experiments(&a, true, false),
        Command::Fig7(a) => {
            let seed = need_seed(&a.common)?;
            let mut cfg = load(&a.common)?;
            if let Some(d) = a.drops {
                cfg.d2d.drops = d;
            }
            if let Some(m) = a.m {
                cfg.d2d.m = m;
            }
            if let Some(p) = &a.phi {
                cfg.d2d.phi = parse_f64_list(p).map_err(|e| CliError::Usage(format!("--phi: {e}")))?;
            }
            if let Some(q) = &a.q {
                cfg.d2d.q = parse_f64_list(q).map_err(|e| CliError::Usage(format!("--q: {e}")))?;
            }
            invalid(&cfg)?;
            let dir = out_dir(&a.common.out)?;
            let rows = run_fig7(&cfg.d2d, seed).map_err(runtime)?;
            let path = write_d2d(dir, &rows).map_err(runtime)?;
            let fig7 = Some(summarize_fig7(&cfg.d2d, &rows));
            write_summary(dir, &Summary { seed, config: &cfg, fig6: None, fig7 }).map_err(runtime)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn run_experiments(a: &RunArgs, fig6: bool, fig7: bool) -> Result<(), CliError> {
    let seed = need_seed(&a.common)?;
    let mut cfg = load(&a.common)?;
    if let Some(r) = a.rounds {
        cfg.rounds = r;
    }
    if let Some(d) = a.drops {
        cfg.d2d.drops = d;
    }
    invalid(&cfg)?;
    let dir = out_dir(&a.common.out)?;
    let mut summary = Summary { seed, config: &cfg, fig6: None, fig7: None };
    if fig6 {
        let rounds = run_fig6(&cfg.world, cfg.rounds, seed).map_err(runtime)?;
        let path = write_throughput(dir, &throughput_rows(&rounds)).map_err(runtime)?;
        println!("{}", path.display());
        if let Some(first) = rounds.first() {
            let path = write_trace(dir, &first.trace).map_err(runtime)?;
            println!("{}", path.display());
        }
        summary.fig6 = Some(summarize_fig6(&rounds));
    }
    if fig7 {
        let rows = run_fig7(&cfg.d2d, seed).map_err(runtime)?;
        let path = write_d2d(dir, &rows).map_err(runtime)?;
        println!("{}", path.display());
        summary.fig7 = Some(summarize_fig7(&cfg.d2d, &rows));
    }
    let path = write_summary(dir, &summary).map_err(runtime)?;
    println!("{}", path.display());
    Ok(())
}
