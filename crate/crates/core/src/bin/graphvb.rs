use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use graphvb::experiment::{emit_report, run_experiment, ExperimentConfig};

/// Run a graph signal recovery experiment sweep described by a TOML file.
#[derive(Debug, Parser)]
#[command(name = "graphvb", version)]
struct Args {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Run only this seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent cells (default: all cores).
    #[arg(long)]
    max_parallelism: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, default_value = "info")]
    log_level: log::LevelFilter,
}

fn main() -> ExitCode {
    let args = Args::parse();
    env_logger::Builder::new()
        .filter_level(args.log_level)
        .format_timestamp(None)
        .init();

    let mut config = match ExperimentConfig::from_file(&args.config) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(dir) = args.output_dir {
        config.output_dir = dir;
    }
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    if let Some(threads) = args.max_parallelism {
        if threads == 0 {
            log::error!("--max-parallelism must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::error!("cannot configure worker pool: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match run_experiment(&config) {
        Ok(r) => r,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(2);
        }
    };
    match emit_report(&result, &config.output_dir) {
        Ok(files) => log::info!("wrote {} files to {}", files.len(), config.output_dir.display()),
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(1);
        }
    }
    let failed = result.outcomes.iter().filter(|o| o.result.is_err()).count();
    if failed > 0 {
        log::error!("{failed} of {} cells failed", result.outcomes.len());
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
