use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sticky_core::run::{failure_summary, replay, run, Command, RunOutcome};
use sticky_core::scenario::{Overrides, ScenarioFile};
use sticky_core::schemes::SchemeKind;

/// Sticky reflected diffusions on bounded domains: simulation and checks.
#[derive(Parser)]
#[command(name = "sticky", version)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "STICKY_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate and write trajectories.csv.
    Simulate(RunArgs),
    /// Boundary occupation fraction against its prediction.
    Occupation(RunArgs),
    /// Ergodic averages against μ-averages.
    Ergodic(RunArgs),
    /// Frame invariants and the curvature identity on the boundary.
    VerifyGeometry(RunArgs),
    /// Compact against split generator and quadrature symmetry.
    VerifyGenerator(RunArgs),
    /// Time-change against direct scheme, and the exact law in 1D.
    CompareSchemes(RunArgs),
    /// Brownian motion on the boundary surface.
    SurfaceBm(RunArgs),
    /// Re-run the subcommand recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long, default_value = "out/replay")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, positional or via --scenario.
    file: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scheme: Option<SchemeKind>,
    /// Width of statistical verdicts in standard errors.
    #[arg(long)]
    sigma: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(outcome) => report(&outcome),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cmd: Cmd) -> sticky_core::Result<RunOutcome> {
    let (command, args) = match cmd {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Occupation(a) => (Command::Occupation, a),
        Cmd::Ergodic(a) => (Command::Ergodic, a),
        Cmd::VerifyGeometry(a) => (Command::VerifyGeometry, a),
        Cmd::VerifyGenerator(a) => (Command::VerifyGenerator, a),
        Cmd::CompareSchemes(a) => (Command::CompareSchemes, a),
        Cmd::SurfaceBm(a) => (Command::SurfaceBm, a),
        Cmd::Replay { manifest, out } => return replay(&manifest, &out),
    };
    let path = args
        .scenario
        .or(args.file)
        .ok_or_else(|| sticky_core::Error::Validation("no scenario file given".into()))?;
    let mut file = ScenarioFile::parse(&std::fs::read_to_string(&path)?)?;
    file.apply(&Overrides {
        paths: args.paths,
        horizon: args.horizon,
        dt: args.dt,
        seed: args.seed,
        scheme: args.scheme,
        sigma: args.sigma,
    });
    let mut loaded = file.build()?;
    let out = args.out.unwrap_or_else(|| PathBuf::from("out").join(command.name()));
    run(command, &mut loaded, &out)
}

fn report(outcome: &RunOutcome) -> ExitCode {
    for r in &outcome.reports {
        let target = r.target.as_ref().map_or(String::from("-"), |t| t.value.to_string());
        println!(
            "{:<48} {:>14.6e} ± {:<10.3e} target {:<12} {:?}",
            r.name, r.estimate, r.std_error, target, r.verdict
        );
    }
    match failure_summary(outcome) {
        None => ExitCode::SUCCESS,
        Some(msg) => {
            eprintln!("failed: {msg}");
            ExitCode::from(1)
        }
    }
}
