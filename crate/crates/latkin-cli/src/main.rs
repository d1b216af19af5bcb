use clap::{Parser, Subcommand, ValueEnum};
use latkin::harness::{
    emit, run_compare_tau, run_constants, run_propagator, run_solve, run_verify, ExperimentConfig, Format,
};
use latkin::par::{set_threads, Exec};
use latkin::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "latkin", version, about = "Finite-lattice truncated wave kinetic equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; runs go to a subdirectory named by the config hash.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Tabular output format; overrides the configured formats.
    #[arg(long, global = true)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Preflight, solve and export a trajectory.
    Solve,
    /// Run the configured verification suites.
    Verify,
    /// Memory window against a constant window over a list of couplings.
    CompareTau,
    /// Propagator bound sweep.
    Propagator,
    /// Constants table for the configured dimension and β.
    Constants,
}

fn run(cli: Cli) -> Result<i32, Error> {
    let path = cli
        .config
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(f) = cli.format {
        cfg.output.formats = vec![match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }];
    }
    let exec = match cli.threads {
        Some(0) => return Err(Error::Config("--threads must be at least 1".into())),
        Some(1) => Exec::Sequential,
        Some(n) => {
            set_threads(n);
            Exec::Parallel
        }
        None => Exec::Parallel,
    };
    let out = cli.out.unwrap_or_else(|| cfg.output.dir.clone());
    let mut stdout = std::io::stdout();
    match cli.command {
        Command::Solve => {
            let r = run_solve(&cfg, &out, exec)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            emit(&mut stdout, &r.dir.display().to_string());
            Ok(0)
        }
        Command::Verify => {
            let r = run_verify(&cfg, &out, exec)?;
            for s in &r.results {
                emit(&mut stdout, &format!("{}: {}", s.suite, if s.pass { "pass" } else { "FAIL" }));
            }
            emit(&mut stdout, &r.dir.display().to_string());
            Ok(if r.passed() { 0 } else { 3 })
        }
        Command::CompareTau => {
            let (dir, rep) = run_compare_tau(&cfg, &out, exec)?;
            if let Some(c) = &rep.caveat {
                eprintln!("note: {c}");
            }
            emit(&mut stdout, &dir.display().to_string());
            Ok(0)
        }
        Command::Propagator => {
            let (dir, pass) = run_propagator(&cfg, &out, exec)?;
            emit(&mut stdout, &format!("propagator: {}", if pass { "pass" } else { "FAIL" }));
            emit(&mut stdout, &dir.display().to_string());
            Ok(if pass { 0 } else { 3 })
        }
        Command::Constants => {
            let (dir, v) = run_constants(&cfg, &out)?;
            emit(&mut stdout, &serde_json::to_string_pretty(&v["constants"]).unwrap_or_default());
            emit(&mut stdout, &dir.display().to_string());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
