use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use club_core::harness::{emit_run, emit_sweep, plot_dir, run_experiment, sweep, ExperimentConfig};
use club_core::ClubError;

/// Reserve-price learning simulator.
#[derive(Parser)]
#[command(name = "club", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment per seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to every seed listed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a grid of episode counts over seeds and fit the regret slope.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated episode counts, e.g. 500,1000,2000,4000.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
        /// Use seeds 0..n instead of the config's list.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Render an SVG from a run or sweep output directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), ClubError> {
    match cli.command {
        Command::Run { config, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = cfg.resolved_out_dir();
            let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
            for seed in seeds {
                let result = run_experiment(&cfg, seed)?;
                emit_run(&result, &dir)?;
                let s = &result.summary;
                println!(
                    "seed {seed}: {} episodes, regret {:.4}, {} updates, {} buffers -> {}",
                    s.episodes,
                    s.final_regret,
                    s.update_count,
                    s.buffer_count,
                    dir.display()
                );
            }
        }
        Command::Sweep { config, k, seeds } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seed_list: Vec<u64> = seeds.map_or_else(|| cfg.seeds.clone(), |n| (0..n).collect());
            let result = sweep(&cfg, &k, &seed_list, run_experiment)?;
            let dir = cfg.resolved_out_dir();
            emit_sweep(&result, &dir)?;
            for p in &result.points {
                println!("K={}: median regret {:.4}", p.episodes, p.median_regret);
            }
            if let Some(f) = result.fit {
                println!("slope {:.4} (r² {:.3})", f.alpha, f.r2);
            }
            println!("-> {}", dir.display());
        }
        Command::Plot { input, out } => {
            plot_dir(&input, &out)?;
            println!("-> {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 1 })
        }
    }
}
