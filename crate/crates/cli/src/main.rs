use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lorasim::config::SweepAxes;
use lorasim::{emit_results, load_config, run_experiment, CellResult, Error, ExperimentSpec};

#[derive(Parser)]
#[command(
    name = "lorasim",
    version,
    about = "Deterministic LoRaWAN cell simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the base configuration only, ignoring any sweep axes.
    Run(RunArgs),
    /// Run every cell of the configured sweep.
    Sweep(RunArgs),
    /// Check a config file and print the effective configuration.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file (TOML). Omitted keys take their defaults.
    config: Option<PathBuf>,
    /// Master seed; overrides `simulation.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Replications per cell; overrides `simulation.replications`.
    #[arg(long)]
    replications: Option<usize>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: one per core). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Invariant(_) => 2,
        Error::Param(_) | Error::Config { .. } | Error::Parse { .. } | Error::Io { .. } => 1,
    }
}

fn load(path: Option<&Path>) -> lorasim::Result<ExperimentSpec> {
    match path {
        Some(p) => load_config(p),
        None => {
            let spec = ExperimentSpec::default();
            spec.validate()?;
            Ok(spec)
        }
    }
}

fn prepare(args: &RunArgs, single: bool) -> lorasim::Result<ExperimentSpec> {
    let mut spec = load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        spec.simulation.seed = seed;
    }
    if let Some(reps) = args.replications {
        spec.simulation.replications = reps;
    }
    if let Some(out) = &args.out {
        spec.output.dir = out.clone();
    }
    if single {
        spec.sweep = SweepAxes::default();
    }
    spec.validate()?;
    Ok(spec)
}

fn report(results: &[CellResult]) {
    for r in results {
        let s = &r.monte_carlo.summary;
        let c = &r.cell.coords;
        let fmt = |m: &str| s.mean(m).map_or("n/a".to_string(), |v| format!("{v:.4}"));
        eprintln!(
            "cell {:>3}  payload {:>2} B  sigma {:>4}  adr {:<5}  confirmed {:<5}  der {}  mJ/B {}",
            r.cell.index,
            c.payload_len,
            c.sigma,
            c.adr,
            c.confirmed,
            fmt("der"),
            fmt("energy_per_byte_mean"),
        );
    }
}

fn execute(args: &RunArgs, single: bool) -> lorasim::Result<()> {
    let spec = prepare(args, single)?;
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Config {
                key: "--threads".into(),
                message: "must be at least 1".into(),
            });
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let cells = spec.cells().len();
    eprintln!(
        "running {cells} cell(s) x {} replication(s), seed {}",
        spec.simulation.replications, spec.simulation.seed
    );
    let results = run_experiment(&spec)?;
    report(&results);
    for path in emit_results(&spec.output.dir, &spec, &results)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn validate(path: &Path) -> lorasim::Result<()> {
    let spec = load_config(path)?;
    print!("{}", spec.to_toml_string());
    eprintln!("ok: {} cell(s)", spec.cells().len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Run(args) => execute(args, true),
        Command::Sweep(args) => execute(args, false),
        Command::Validate { config } => validate(config),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
