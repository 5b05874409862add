use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use distphase_cli::{exit, parse_config, run_experiment, CliError, ExperimentKind, GaugeChoice};

#[derive(Parser)]
#[command(name = "distphase", version, about = "Geometric phase of a boxed particle swept by a distant flux line")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set alpha=2pi/3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Gauge to propagate in.
    #[arg(long, global = true, value_parser = ["vector", "coulomb", "both"])]
    gauge: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Single sweep across the box: phase, bound and phase map.
    Sweep,
    /// Closed loops around the box.
    Loop,
    /// Off-diagonal coupling against its analytic bound at every step.
    BoundCheck,
    /// Repeats the sweep with refined truncation and step.
    Convergence,
    /// Phase map of the state after a sweep.
    PhaseMap,
    /// Overlap with the initial state after each of several loops at alpha = 2 pi p/q.
    Recurrence,
}

impl From<Command> for ExperimentKind {
    fn from(c: Command) -> Self {
        match c {
            Command::Sweep => ExperimentKind::Sweep,
            Command::Loop => ExperimentKind::Loop,
            Command::BoundCheck => ExperimentKind::BoundCheck,
            Command::Convergence => ExperimentKind::Convergence,
            Command::PhaseMap => ExperimentKind::PhaseMap,
            Command::Recurrence => ExperimentKind::Recurrence,
        }
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let gauge = cli.gauge.as_deref().map(str::parse::<GaugeChoice>).transpose()?;
    let cfg = parse_config(cli.command.into(), &text, &cli.set, gauge, cli.out)?;
    let outcome = run_experiment(&cfg)?;
    print!("{}", outcome.render());
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    let code = match run(Cli::parse()) {
        Ok(true) => exit::SUCCESS,
        Ok(false) => exit::CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
