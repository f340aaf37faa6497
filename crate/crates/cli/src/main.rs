use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use relayfl_core::channel::RoundTimings;
use relayfl_core::harness::{compare, report, run_experiment, ExperimentConfig};
use relayfl_core::scheduler::{solve_directions, CellVolumes, ConflictRule, Direction, SchedulerConfig, Solver};
use relayfl_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "relayfl", version, about = "Multi-server federated learning simulator with relay scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured scheme under every seed.
    Run { config: PathBuf },
    /// Schedule relays for one round of timings and print the plan as JSON.
    Schedule {
        /// Round timings, optionally with a `volumes` object.
        timings: PathBuf,
        #[arg(long, value_enum, default_value_t = Lanes::Both)]
        direction: Lanes,
        /// Use the exhaustive search instead of the heuristic.
        #[arg(long)]
        oracle: bool,
        #[arg(long, value_enum, default_value_t = Conflict::Link)]
        conflict: Conflict,
        #[arg(long)]
        tmax_override: Option<f64>,
    },
    /// Seed-averaged CSV per scheme from the traces in a result directory.
    Report { dir: PathBuf },
    /// Wall-clock aligned gap and accuracy of every scheme in a result directory.
    Compare { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Lanes {
    Rightward,
    Leftward,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Conflict {
    Link,
    Node,
}

#[derive(Deserialize)]
struct ScheduleInput {
    #[serde(flatten)]
    timings: RoundTimings,
    volumes: Option<CellVolumes>,
}

#[derive(Serialize)]
struct ScheduleOutput<'a> {
    plan: &'a relayfl_core::scheduler::SchedulePlan,
    participation: &'a relayfl_core::scheduler::ParticipationMatrix,
    utility: f64,
}

fn schedule(path: &Path, lanes: Lanes, oracle: bool, conflict: Conflict, tmax_override: Option<f64>) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let input: ScheduleInput =
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    input.timings.validate().map_err(|e| Error::config("timings", e.to_string()))?;
    let volumes = input.volumes.unwrap_or_else(|| CellVolumes::uniform(input.timings.num_cells(), 1.0));
    let cfg = SchedulerConfig {
        conflict: match conflict {
            Conflict::Link => ConflictRule::Link,
            Conflict::Node => ConflictRule::Node,
        },
        tmax_override,
        ..Default::default()
    };
    let directions: &[Direction] = match lanes {
        Lanes::Rightward => &[Direction::Rightward],
        Lanes::Leftward => &[Direction::Leftward],
        Lanes::Both => &Direction::BOTH,
    };
    let solver = if oracle { Solver::Exhaustive } else { Solver::Heuristic };
    let s = solve_directions(&input.timings, &volumes, &cfg, solver, directions)?;
    let out = ScheduleOutput { plan: &s.plan, participation: &s.participation, utility: s.utility };
    Ok(serde_json::to_string_pretty(&out).expect("plan serializes"))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = run_experiment(&cfg)?;
            for p in &out.traces {
                println!("{}", p.display());
            }
            println!("{}", out.summary.display());
        }
        Command::Schedule { timings, direction, oracle, conflict, tmax_override } => {
            println!("{}", schedule(&timings, direction, oracle, conflict, tmax_override)?);
        }
        Command::Report { dir } => {
            for p in report(&dir)? {
                println!("{}", p.display());
            }
        }
        Command::Compare { dir } => println!("{}", compare(&dir)?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
