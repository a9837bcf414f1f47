use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dgline::study::{self, RunOptions, StudyConfig};

#[derive(Parser)]
#[command(name = "dgline", version, about = "IPDG solver for problems with a line source on an embedded curve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the stationary problem on every configured level.
    SolveElliptic(RunArgs),
    /// Integrate the heat equation with backward Euler.
    SolveParabolic(RunArgs),
    /// Convergence study: errors, rates and rate assertions.
    Study(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Write VTK files.
    #[arg(long, overrides_with = "no_vtk")]
    vtk: bool,
    /// Skip VTK files.
    #[arg(long, overrides_with = "vtk")]
    no_vtk: bool,
}

impl RunArgs {
    fn setup(&self) -> Result<(StudyConfig, RunOptions)> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("cannot configure the thread pool")?;
        }
        let config = StudyConfig::load(&self.config)?;
        Ok((config, RunOptions { out_dir: self.out_dir.clone(), vtk: !self.no_vtk }))
    }
}

fn report_failures(failures: &[String]) -> ExitCode {
    if failures.is_empty() {
        return ExitCode::SUCCESS;
    }
    for f in failures {
        eprintln!("assertion failed: {f}");
    }
    ExitCode::from(2)
}

fn written(dir: &Path) {
    println!("results written to {}", dir.display());
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::SolveElliptic(args) => {
            let (config, opts) = args.setup()?;
            for l in study::run_elliptic(&config, &opts)? {
                let errs: Vec<String> = l.values.iter().map(|(c, v)| format!("{c} = {v:.3e}")).collect();
                println!("level {} {:?}: {} dofs, {} iterations; {}", l.level, l.cells, l.num_dofs, l.iterations, errs.join(", "));
            }
            written(&opts.out_dir);
            Ok(ExitCode::SUCCESS)
        }
        Command::SolveParabolic(args) => {
            let (config, opts) = args.setup()?;
            let report = study::run_parabolic(&config, &opts)?;
            for l in &report.levels {
                print!(
                    "level {} {:?}: {} steps, final L2 = {:.3e}, max stability ratio = {:.3}",
                    l.level, l.cells, l.steps, l.final_l2, l.max_stability_ratio
                );
                match l.steady_state_distance {
                    Some(d) => println!(", distance to steady state = {d:.3e}"),
                    None => println!(),
                }
            }
            written(&opts.out_dir);
            Ok(report_failures(&report.failures))
        }
        Command::Study(args) => {
            let (config, opts) = args.setup()?;
            let report = study::run_study(&config, &opts)?;
            print!("{}", study::rate_table(config.discretization.k, &report));
            written(&opts.out_dir);
            Ok(report_failures(&report.failures))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
