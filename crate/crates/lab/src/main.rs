use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chemotaxis_lab::experiments::{self, DEFAULT_CELL_BUDGET};
use chemotaxis_lab::presets::{self, PRESETS};
use chemotaxis_lab::{LabError, Manifest, RunConfig};

/// Structure-preserving simulations of a two-species chemotaxis-consumption
/// system.
///
/// Exit status: 0 when every check passed, 1 when a check failed, 2 on a
/// usage, configuration or I/O error.
#[derive(Parser)]
#[command(name = "chemotaxis-lab", version)]
struct Cli {
    /// Worker threads for sweeps and refinement studies.
    #[arg(long, global = true, env = "CHEMOTAXIS_LAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write records.csv and manifest.txt.
    Run(Source),
    /// Compare the regularized family with the unregularized system.
    SweepEps {
        #[command(flatten)]
        source: Source,
        /// Values of ε, strictly decreasing, inside (0, 1).
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1,0.05")]
        eps: Vec<f64>,
    },
    /// Run the configuration on successively halved grids.
    Refine {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Largest number of cells allowed on the finest grid.
        #[arg(long, default_value_t = DEFAULT_CELL_BUDGET)]
        cell_budget: usize,
    },
    /// List the named presets.
    Presets,
    /// Validate a configuration and print it fully resolved.
    Check(Source),
}

#[derive(Args)]
struct Source {
    /// Configuration file (INI-style `key = value`).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory; defaults to `output_dir` from the config, then
    /// `out/<preset>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the seed of the initial perturbation.
    #[arg(long)]
    seed: Option<u64>,
}

impl Source {
    fn load(&self) -> Result<RunConfig, LabError> {
        let mut config = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::from_path(path)?,
            (None, Some(name)) => presets::preset(name)?,
            (None, None) => {
                return Err(LabError::Request(
                    "pass --config <file> or --preset <name>".into(),
                ))
            }
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }

    fn out_dir(&self, config: &RunConfig, kind: &str) -> PathBuf {
        self.out
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| {
                Path::new("out").join(format!(
                    "{}-{kind}",
                    config.preset.as_deref().unwrap_or("run")
                ))
            })
    }
}

fn report(manifest: &Manifest, dir: &Path) -> ExitCode {
    for v in &manifest.verdicts {
        println!("{}", v.line());
    }
    println!("wrote {}", dir.display());
    if manifest.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn execute(cli: Cli) -> Result<ExitCode, LabError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LabError::Request(e.to_string()))?;
    }
    match cli.command {
        Command::Run(source) => {
            let config = source.load()?;
            let dir = source.out_dir(&config, "run");
            let outcome = experiments::run(&config)?;
            experiments::write_run(&outcome, &dir)?;
            Ok(report(&outcome.manifest, &dir))
        }
        Command::SweepEps { source, eps } => {
            let config = source.load()?;
            let dir = source.out_dir(&config, "sweep");
            let sweep = experiments::eps_sweep(&config, &eps)?;
            experiments::write_sweep(&sweep, &dir)?;
            Ok(report(&sweep.manifest, &dir))
        }
        Command::Refine {
            source,
            levels,
            cell_budget,
        } => {
            let config = source.load()?;
            let dir = source.out_dir(&config, "refine");
            let study = experiments::refinement_study(&config, levels, cell_budget)?;
            experiments::write_refinement(&study, &dir)?;
            Ok(report(&study.manifest, &dir))
        }
        Command::Presets => {
            for (name, about) in PRESETS {
                println!("{name:<22} {about}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check(source) => {
            let config = source.load()?;
            config.resolve()?;
            print!("{}", config.to_ini());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
