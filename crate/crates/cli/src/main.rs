//! `fidec`: dataset generation, training, sweeps, validation and plot export.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fidec::envs::{DatasetMode, SyntheticTask};
use fidec::harness::{
    ablate_metric, export_plots, parse_key_values, parse_override, run_suites, run_train, suite_names, sweep_teps,
    ExportSpec, RunConfig, DEFAULT_TEPS_GRID,
};
use fidec::train::MetricKind;
use fidec::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "fidec", version, about = "Fisher-metric refinement of flow-matching policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut overrides = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
        let seeds = self.seed.map(|s| vec![s]).or_else(|| self.seeds.clone());
        if let Some(seeds) = seeds {
            let list = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
            overrides.push(("run.seeds".into(), list));
        }
        if let Some(out) = &self.out {
            overrides.push(("run.out".into(), out.display().to_string()));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic offline dataset.
    GenData {
        #[arg(long, default_value = "bimodal")]
        task: String,
        #[arg(long, default_value_t = 4096)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// bandit or chain
        #[arg(long, default_value = "bandit")]
        mode: String,
        /// Task parameter override, e.g. `--set sigma=0.3`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every configured seed and write checkpoints, logs and a report.
    Train(RunArgs),
    /// One run per perturbed time and seed.
    SweepTeps {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated t_eps grid.
        #[arg(long, value_delimiter = ',')]
        teps: Option<Vec<f64>>,
    },
    /// Paired runs that differ only in the metric.
    AblateMetric {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated task names; defaults to the configured task.
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<String>,
        /// The two metric kinds to compare.
        #[arg(long, value_delimiter = ',', num_args = 1, default_value = "fisher,isotropic")]
        arms: Vec<String>,
    },
    /// Run the numerical oracle suites.
    Validate {
        /// List suites without running them.
        #[arg(long)]
        list: bool,
        /// Run only this suite. Repeatable.
        #[arg(long)]
        suite: Vec<String>,
    },
    /// Export sample clouds and heatmap grids of a trained run.
    ExportPlots {
        /// Directory written by `fidec train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Heatmap points per axis.
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the fully resolved config.
    ShowConfig(RunArgs),
}

fn progress(msg: &str) {
    eprintln!("{}", msg.trim_end());
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::GenData {
            task,
            size,
            seed,
            mode,
            set,
            out,
        } => {
            let mut params = parse_key_values("")?;
            for s in &set {
                let (k, v) = parse_override(s)?;
                params.insert(k, v);
            }
            let task = SyntheticTask::with_overrides(&task, &params)?;
            let mode: DatasetMode = mode.parse()?;
            let ds = task.make_dataset(size, seed, mode)?;
            ds.save(&out)?;
            println!("wrote {} rows to {}", ds.len(), out.display());
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let rows = run_train(&cfg, &mut progress)?;
            println!("{} run(s) written to {}", rows.len(), cfg.out.display());
        }
        Command::SweepTeps { run, teps } => {
            let cfg = run.resolve()?;
            let grid = teps.unwrap_or_else(|| DEFAULT_TEPS_GRID.to_vec());
            let rows = sweep_teps(&cfg, &grid, &mut progress)?;
            println!("{} run(s) written to {}", rows.len(), cfg.out.display());
        }
        Command::AblateMetric { run, tasks, arms } => {
            let cfg = run.resolve()?;
            let kinds = arms.iter().map(|a| a.parse()).collect::<Result<Vec<MetricKind>, _>>()?;
            let [first, second] = kinds[..] else {
                return Err(Error::InvalidInput("--arms takes exactly two metric kinds".into()));
            };
            let report = ablate_metric(&cfg, &tasks, (first, second), &mut progress)?;
            print!("{}", report.summary());
        }
        Command::Validate { list, suite } => {
            if list {
                for (name, about) in suite_names() {
                    println!("{name:<18} {about}");
                }
                return Ok(0);
            }
            let results = run_suites(&suite)?;
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.pass).count();
            println!("{} of {} suites passed", results.len() - failed, results.len());
            if failed > 0 {
                return Ok(EXIT_NUMERIC);
            }
        }
        Command::ExportPlots {
            run,
            out,
            samples,
            grid,
            seed,
        } => {
            let summary = export_plots(
                &run,
                &out,
                &ExportSpec {
                    samples,
                    grid_points: grid,
                    seed,
                },
            )?;
            println!(
                "wrote {} ({} samples per cloud) and {} ({}x{} grid)",
                summary.samples_file.display(),
                summary.samples,
                summary.heatmap_file.display(),
                summary.grid.0,
                summary.grid.1
            );
        }
        Command::ShowConfig(args) => print!("{}", args.resolve()?.to_text()),
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { EXIT_NUMERIC } else { EXIT_USAGE })
        }
    }
}
