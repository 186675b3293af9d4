use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use mmkg::cli_io::{execute, ExperimentKind, RunConfig, OUTPUT_ROOT_ENV};
use mmkg::par::with_jobs;
use mmkg::{Error, Exec};

#[derive(Parser)]
#[command(name = "mmkg", version, about = "Massive Maxwell–Klein–Gordon numerical experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Evolve Cauchy data and extract a±, q₀ and the radiation fields.
    Forward,
    /// Build the approximate solution from scattering data and solve backward.
    Backward,
    /// Check the charge identity and the charge of the constrained slice.
    ChargeCheck,
    /// Check the hyperboloidal change of variables by quadrature.
    JacobianCheck,
    /// Check t·A^M_L → q∞ towards null infinity.
    RadiationLimit,
    /// Check the strong Huygens interior profile and its Lorenz gauge.
    HuygensCheck,
    /// Resolution and truncation sweeps.
    Sweep,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Forward => ExperimentKind::Forward,
            Command::Backward => ExperimentKind::Backward,
            Command::ChargeCheck => ExperimentKind::ChargeCheck,
            Command::JacobianCheck => ExperimentKind::JacobianCheck,
            Command::RadiationLimit => ExperimentKind::RadiationLimit,
            Command::HuygensCheck => ExperimentKind::HuygensCheck,
            Command::Sweep => ExperimentKind::Sweep,
        }
    }
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults to the built-in baseline.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; defaults to <output root>/<experiment>-<config hash>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Multiply every tolerance by this factor (at least 1).
    #[arg(long, global = true)]
    tolerance_scale: Option<f64>,
    /// Run on a single thread without the data-parallel executor.
    #[arg(long, global = true)]
    sequential: bool,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Output root for run directories.
    #[arg(long = "output-root", env = OUTPUT_ROOT_ENV, global = true, hide = true)]
    output_root: Option<PathBuf>,
}

fn load_config(kind: ExperimentKind, common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg = RunConfig::from_json(&text)?;
            if cfg.experiment != kind {
                bail!(Error::Schema(format!(
                    "configuration is for {}, not {}",
                    cfg.experiment.name(),
                    kind.name()
                )));
            }
            cfg
        }
        None => RunConfig::baseline(kind),
    };
    if let Some(scale) = common.tolerance_scale {
        cfg.tolerances.scale = scale;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let kind = cli.command.kind();
    let common = &cli.common;
    let cfg = load_config(kind, common)?;
    if common.print_config {
        println!("{}", cfg.to_json());
        return Ok(true);
    }
    let dir = common.out.clone().unwrap_or_else(|| cfg.run_dir(common.output_root.clone()));
    let exec = if common.sequential { Exec::Sequential } else { Exec::default() };
    let manifest = with_jobs(common.jobs, || execute(&cfg, &dir, exec))??;
    for note in &manifest.notes {
        println!("note: {note}");
    }
    for v in &manifest.verdicts {
        println!("{}", v.summary());
    }
    println!(
        "{} checks, {} failed, {:.1} s -> {}",
        manifest.verdicts.len(),
        manifest.verdicts.iter().filter(|v| !v.pass).count(),
        manifest.wall_clock_seconds,
        dir.display()
    );
    Ok(manifest.all_pass())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
