//! `bprx`: fit source libraries, run reuse experiments, ablations and
//! continual-learning sweeps, and plot the results.

use std::path::PathBuf;
use std::process::ExitCode;

use bprx_core::harness::{
    emit_plots, fit_sources, run_ablation, run_continual, run_experiment, summarize, summarize_ablation,
    write_ablation, write_continual, write_experiment, ExperimentConfig, HarnessError, Libraries, SummaryRow,
};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bprx", version, about = "Bayesian policy reuse with dynamics-model signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the master seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect samples for every source task, fit models and write a library.
    FitSources {
        #[command(flatten)]
        common: Common,
    },
    /// Run every configured method on every target.
    Run {
        #[command(flatten)]
        common: Common,
        /// Library directory written by `fit-sources`.
        #[arg(long)]
        library: PathBuf,
    },
    /// Refit the source models at several sample sizes and rerun ours-*.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sample sizes; defaults to the configuration's.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Run with novelty detection and online library expansion.
    Continual {
        #[command(flatten)]
        common: Common,
        /// Library directory written by `fit-sources`.
        #[arg(long)]
        library: PathBuf,
    },
    /// Draw mean return curves with 95% confidence bands.
    Plot {
        /// Results CSV written by `run` or `continual`.
        #[arg(long)]
        results: PathBuf,
        /// Output directory for the SVG files.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn print_summary(rows: &[SummaryRow]) {
    for r in rows.iter().filter(|r| r.target_task == "all") {
        println!(
            "{:<11} episode {:>3}: mean {:>10.3} ± {:.3} (n={})",
            r.method, r.episode, r.mean, r.ci95, r.n
        );
    }
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::FitSources { common } => {
            let config = load_config(&common)?;
            let manifest = fit_sources(&config, &common.out)?;
            println!(
                "fitted {} source tasks into {}",
                manifest.tasks.len(),
                common.out.display()
            );
        }
        Command::Run { common, library } => {
            let config = load_config(&common)?;
            let libs = Libraries::load(&config, &library)?;
            let output = run_experiment(&config, &libs)?;
            write_experiment(&common.out, &config, &output)?;
            print_summary(&summarize(&output.rows));
            println!("wrote {} rows to {}", output.rows.len(), common.out.display());
        }
        Command::Ablate { common, sizes } => {
            let config = load_config(&common)?;
            let sizes = sizes.unwrap_or_else(|| config.sample_sizes.clone());
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(HarnessError::Config("sample sizes must be positive".into()));
            }
            let rows = run_ablation(&config, &sizes)?;
            write_ablation(&common.out, &config, &rows)?;
            for s in summarize_ablation(&rows) {
                println!(
                    "{:<11} {:>5} samples: mean {:>10.3} ± {:.3} (n={})",
                    s.method, s.sample_size, s.mean, s.ci95, s.n
                );
            }
        }
        Command::Continual { common, library } => {
            let config = load_config(&common)?;
            let libs = Libraries::load(&config, &library)?;
            let output = run_continual(&config, &libs)?;
            write_continual(&common.out, &config, &output)?;
            let grown = output.growth.iter().filter(|g| g.detection_episode.is_some()).count();
            print_summary(&summarize(&output.rows));
            println!("{grown} expansions over {} target runs", output.growth.len());
        }
        Command::Plot { results, out } => {
            for path in emit_plots(&results, &out)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
