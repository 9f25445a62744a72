use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use clap::{Args, Parser, Subcommand};
use xphase::scenario::{self, load_scenario, resolve_out_dir, ScenarioError, ScenarioKind};

/// Extended phase-space scenarios: simulations, canonical maps and group checks.
#[derive(Parser)]
#[command(name = "xphase", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate trajectories and record the Hᵉ drift.
    Simulate(RunArgs),
    /// Apply a generating-function map and check it is canonical.
    Transform(RunArgs),
    /// Tabulate two-cocycle values for given algebra pairs.
    Cocycle(RunArgs),
    /// Decide Hamiltonian equivariance of a lift.
    Equivariance(RunArgs),
    /// Check homogeneous Maxwell, vacuum and interior-product residuals.
    MaxwellCheck(RunArgs),
    /// Tabulate finite boosts with the quadratic invariant.
    BoostTable(RunArgs),
    /// Load and validate a scenario without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or a directory of `*.json` scenarios run as a batch.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

enum Status {
    Passed,
    GateFailed,
    Error,
}

fn report_error(origin: &Path, err: &ScenarioError) {
    let mut v = err.to_json();
    v["config"] = serde_json::json!(origin.display().to_string());
    eprintln!("{v}");
}

fn run_one(kind: ScenarioKind, path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<(bool, String), ScenarioError> {
    let mut sc = load_scenario(path)?;
    if sc.kind != kind {
        return Err(ScenarioError::Schema { key: "kind".into(), message: format!("file declares {}, command is {kind}", sc.kind) });
    }
    if let Some(seed) = seed {
        sc = sc.with_seed(seed);
    }
    let dir = resolve_out_dir(&sc, out);
    let outcome = scenario::run(&sc, &dir)?;
    Ok((outcome.passed, outcome.summary(kind)))
}

fn scenario_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn run_command(kind: ScenarioKind, args: &RunArgs) -> Status {
    if !args.config.is_dir() {
        return match run_one(kind, &args.config, args.out.as_deref(), args.seed) {
            Ok((passed, line)) => {
                println!("{line}");
                if passed { Status::Passed } else { Status::GateFailed }
            }
            Err(e) => {
                report_error(&args.config, &e);
                Status::Error
            }
        };
    }
    let files = match scenario_files(&args.config) {
        Ok(f) => f,
        Err(e) => {
            report_error(&args.config, &ScenarioError::Io { path: args.config.display().to_string(), message: e.to_string() });
            return Status::Error;
        }
    };
    let base = args.out.clone().unwrap_or_else(|| PathBuf::from("xphase-out"));
    let results: Vec<_> = thread::scope(|s| {
        let handles: Vec<_> = files
            .iter()
            .map(|f| {
                let out = base.join(f.file_stem().unwrap_or_default());
                s.spawn(move || run_one(kind, f, Some(&out), args.seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("scenario worker panicked")).collect()
    });
    let mut status = Status::Passed;
    for (file, result) in files.iter().zip(results) {
        match result {
            Ok((passed, line)) => {
                println!("{}: {line}", file.display());
                if !passed && !matches!(status, Status::Error) {
                    status = Status::GateFailed;
                }
            }
            Err(e) => {
                report_error(file, &e);
                status = Status::Error;
            }
        }
    }
    status
}

fn validate(path: &Path) -> Status {
    let files = if path.is_dir() {
        match scenario_files(path) {
            Ok(f) => f,
            Err(e) => {
                report_error(path, &ScenarioError::Io { path: path.display().to_string(), message: e.to_string() });
                return Status::Error;
            }
        }
    } else {
        vec![path.to_path_buf()]
    };
    let mut status = Status::Passed;
    for f in &files {
        match load_scenario(f) {
            Ok(sc) => println!("{}: valid {} scenario", f.display(), sc.kind),
            Err(e) => {
                report_error(f, &e);
                status = Status::Error;
            }
        }
    }
    status
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match &cli.command {
        Command::Simulate(a) => run_command(ScenarioKind::Simulate, a),
        Command::Transform(a) => run_command(ScenarioKind::Transform, a),
        Command::Cocycle(a) => run_command(ScenarioKind::Cocycle, a),
        Command::Equivariance(a) => run_command(ScenarioKind::Equivariance, a),
        Command::MaxwellCheck(a) => run_command(ScenarioKind::MaxwellCheck, a),
        Command::BoostTable(a) => run_command(ScenarioKind::BoostTable, a),
        Command::Validate { config } => validate(config),
    };
    match status {
        Status::Passed => ExitCode::SUCCESS,
        Status::GateFailed => ExitCode::from(1),
        Status::Error => ExitCode::from(2),
    }
}
