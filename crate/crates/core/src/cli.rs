//! Command-line interface: `run`, `validate`, and `replay`.
//!
//! Exit status is 0 on success, 1 on a runtime failure, and 2 on an invalid
//! or unreadable scenario or bad usage.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::output::{read_runs, read_summary, write_aggregates, write_run, RunInfo};
use crate::scenario::Scenario;
use crate::sim::{generate_truth, run_single, Mode, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "regtrack", version, about = "Joint sensor registration and consensus multitarget tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run Monte Carlo simulations and write records, aggregates, and a summary.
    Run(RunArgs),
    /// Check a scenario and list every violation.
    Validate {
        /// Built-in scenario name (ref_tree, ref_cycles) or TOML path.
        #[arg(long)]
        scenario: String,
    },
    /// Rebuild aggregates and the summary from the per-run records.
    Replay {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Built-in scenario name (ref_tree, ref_cycles) or TOML path.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, value_enum, default_value = "jsr-dmt")]
    pub mode: Mode,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub runs: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Consensus iterations per step.
    #[arg(long)]
    pub l_consensus: Option<usize>,
    /// Maximum cardinality of the filters.
    #[arg(long)]
    pub nmax: Option<usize>,
    /// Time in seconds at which consensus starts.
    #[arg(long)]
    pub consensus_on_time: Option<f64>,
    /// Fuse with the true registration instead of estimating it.
    #[arg(long)]
    pub no_registration: bool,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Scenario(_) | Error::TomlDe(_) => 2,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn load_scenario(spec: &str) -> Result<Scenario> {
    let s = Scenario::load(spec)?;
    let v = s.validate();
    if v.is_empty() {
        Ok(s)
    } else {
        Err(Error::Scenario(
            v.iter()
                .map(|m| format!("{spec}: {m}"))
                .collect::<Vec<_>>()
                .join("\n"),
        ))
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<RunInfo> {
    let scenario = load_scenario(&args.scenario)?;
    if let Some(n) = args.nmax {
        if n == 0 {
            return Err(Error::Scenario("--nmax must be positive".into()));
        }
    }
    if args.l_consensus == Some(0) {
        return Err(Error::Scenario("--l-consensus must be positive".into()));
    }
    let consensus_start = match args.consensus_on_time {
        Some(t) if t.is_finite() && t >= 0.0 => Some((t / scenario.step_s).round() as usize),
        Some(t) => return Err(Error::Scenario(format!("--consensus-on-time {t} is not a valid time"))),
        None => None,
    };
    let opts = RunOptions {
        mode: args.mode,
        seed: args.seed,
        consensus_iterations: args.l_consensus,
        consensus_start,
        n_max: args.nmax,
        registration: !args.no_registration,
    };
    let truth = generate_truth(&scenario);
    let mut records = Vec::with_capacity(args.runs as usize);
    for run in 0..args.runs as usize {
        let rec = run_single(&scenario, &truth, &opts, run);
        write_run(&args.out, &rec)?;
        eprintln!(
            "run {run}: {:.1} s{}",
            rec.seconds,
            rec.failure.as_ref().map_or(String::new(), |f| format!(", failed: {f}"))
        );
        records.push(rec);
    }
    let info = RunInfo {
        scenario: scenario.name.clone(),
        mode: args.mode.as_str().into(),
        runs: records.len(),
        seed: args.seed,
        consensus_iterations: args.l_consensus.unwrap_or(scenario.consensus.iterations),
        consensus_start_step: consensus_start.unwrap_or(scenario.consensus.start_step),
        n_max: args.nmax.unwrap_or(scenario.filter.n_max),
        registration: args.mode == Mode::JsrDmt && !args.no_registration,
    };
    let summary = write_aggregates(&args.out, &info, &records)?;
    if !summary.failures.is_empty() {
        return Err(Error::InvalidArgument(summary.failures.join("; ")));
    }
    Ok(info)
}

/// Returns the violations of the scenario (empty when valid).
pub fn cmd_validate(spec: &str) -> Result<Vec<String>> {
    Ok(Scenario::load(spec)?.validate())
}

pub fn cmd_replay(out: &std::path::Path) -> Result<()> {
    let runs = read_runs(out)?;
    let info = read_summary(out)?.info;
    write_aggregates(out, &info, &runs)?;
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match cli.command {
        Command::Run(a) => match cmd_run(&a) {
            Ok(_) => 0,
            Err(e) => {
                eprintln!("{e}");
                exit_code(&e)
            }
        },
        Command::Validate { scenario } => match cmd_validate(&scenario) {
            Ok(v) if v.is_empty() => {
                println!("{scenario}: ok");
                0
            }
            Ok(v) => {
                for m in v {
                    println!("{scenario}: {m}");
                }
                2
            }
            Err(e) => {
                eprintln!("{scenario}: {e}");
                2
            }
        },
        Command::Replay { out } => match cmd_replay(&out) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("{e}");
                1
            }
        },
    }
}
