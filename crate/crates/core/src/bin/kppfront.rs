use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use kpp_fronts::experiment::{
    bundled_config, emit_outputs, output_dir, run_experiment, Experiment, ExperimentConfig,
    Overrides, RunStatus, RunSummary, BUNDLED, CHECKS,
};
use kpp_fronts::profiles::solve_profile_auto;
use kpp_fronts::{Error, Nonlinearity};

#[derive(Parser)]
#[command(name = "kppfront", version, about = "Fisher-KPP fronts and measure-superposition solutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a front profile and write it as a three-column table.
    Profile {
        /// Front speed.
        #[arg(long)]
        speed: f64,
        /// Take the nonlinearity from this config instead of the logistic one.
        #[arg(long)]
        config: Option<String>,
        /// Output directory; the table goes to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evolve a config and write its trace and plot data, without checks.
    Simulate(RunArgs),
    /// Evolve a config and run its checks.
    Verify(RunArgs),
    /// Run every bundled config and aggregate the verdicts.
    VerifyAll {
        /// Root directory; each config writes to a subdirectory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Number of configs run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Comma-separated subset of bundled configs.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
    /// List the check ids with the operation each one exercises.
    ListChecks,
}

#[derive(Args)]
struct RunArgs {
    /// Config file, or the name of a bundled config.
    #[arg(long)]
    config: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dx: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Replacement horizon as START:END.
    #[arg(long, value_parser = parse_horizon, allow_hyphen_values = true)]
    horizon: Option<(f64, f64)>,
    /// Worker threads for the parallel parts of a run.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn parse_horizon(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected START:END, got '{s}'"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("start: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("end: {e}"))?;
    Ok((a, b))
}

fn load(spec: &str) -> Result<ExperimentConfig, Error> {
    let path = Path::new(spec);
    if path.exists() {
        ExperimentConfig::load(path)
    } else if BUNDLED.iter().any(|(n, _)| *n == spec) {
        bundled_config(spec)
    } else {
        Err(Error::Config(format!("{spec}: no such file or bundled config")))
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(RunStatus::of_error(e).exit_code() as u8)
}

fn print_summary(s: &RunSummary) {
    for c in &s.checks {
        println!("{:<5} {:<26} {}", if c.pass { "PASS" } else { "FAIL" }, c.id, c.detail);
    }
    for e in &s.errors {
        println!("ERROR {:<26} {}", e.id, e.error);
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(args: RunArgs, checks: bool) -> Result<ExitCode, Error> {
    let mut cfg = load(&args.config)?.with_overrides(&Overrides {
        dx: args.dx,
        dt: args.dt,
        horizon: args.horizon,
    })?;
    if !checks {
        cfg.checks.clear();
    }
    let dir = output_dir(&cfg, args.out.as_deref());
    let formats = cfg.output.formats.clone();
    let (e, summary): (Option<Experiment>, RunSummary) = pool(args.jobs)?.install(|| run_experiment(cfg));
    emit_outputs(e.as_ref(), &summary, &dir, &formats)?;
    print_summary(&summary);
    println!("{}: {:?}, outputs in {}", summary.name, summary.status, dir.display());
    Ok(ExitCode::from(summary.exit_code() as u8))
}

fn verify_all(out: &Path, jobs: usize, only: &[String]) -> Result<ExitCode, Error> {
    for name in only {
        if !BUNDLED.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("--only: no bundled config named '{name}'")));
        }
    }
    let names: Vec<&str> = BUNDLED
        .iter()
        .map(|(n, _)| *n)
        .filter(|n| only.is_empty() || only.iter().any(|o| o == n))
        .collect();
    let summaries: Vec<RunSummary> = pool(jobs)?.install(|| {
        names
            .par_iter()
            .map(|name| -> Result<RunSummary, Error> {
                let cfg = bundled_config(name)?;
                let formats = cfg.output.formats.clone();
                let (e, s) = run_experiment(cfg);
                emit_outputs(e.as_ref(), &s, &out.join(name), &formats)?;
                Ok(s)
            })
            .collect::<Result<_, _>>()
    })?;
    let mut status = RunStatus::Pass;
    for s in &summaries {
        println!("== {} ({:?})", s.name, s.status);
        print_summary(s);
        status = status.worst(s.status);
    }
    let passed = summaries.iter().filter(|s| s.status == RunStatus::Pass).count();
    println!("{passed}/{} configs passed", summaries.len());
    Ok(ExitCode::from(status.exit_code() as u8))
}

fn profile(speed: f64, config: Option<&str>, out: Option<&Path>) -> Result<ExitCode, Error> {
    let nl = match config {
        Some(c) => load(c)?.nonlinearity()?,
        None => Nonlinearity::logistic(),
    };
    let p = solve_profile_auto(&nl, speed)?;
    let d = p.diagnostics();
    eprintln!(
        "c = {speed}, lambda = {:.12}, {} nodes on [{:.3}, {:.3}], ODE residual {:.2e}, decay bound {:?}, log-derivative bound {}",
        p.decay_rate(),
        p.len(),
        p.xi_range().0,
        p.xi_range().1,
        d.residual,
        d.decay_bound_ok,
        d.logderiv_ok
    );
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("profile_c{speed}.txt"));
            let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
            p.write_text(&mut w)?;
            w.flush()?;
            eprintln!("wrote {}", path.display());
        }
        None => p.write_text(std::io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Profile { speed, config, out } => profile(speed, config.as_deref(), out.as_deref()),
        Command::Simulate(args) => run(args, false),
        Command::Verify(args) => run(args, true),
        Command::VerifyAll { out, jobs, only } => verify_all(&out, jobs, &only),
        Command::ListChecks => {
            for c in CHECKS {
                println!("{:<26} {:<42} {}", c.id, c.operation, c.description);
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    result.unwrap_or_else(|e| fail(&e))
}
