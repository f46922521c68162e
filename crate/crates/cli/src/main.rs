use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wave_cli::commands::{run_sinkhorn_bench, run_train, run_verify_theory};
use wave_cli::output::resolve_out_dir;
use wave_cli::plot::emit_plots;
use wave_cli::{exit, CliError, ExperimentConfig};

/// Wasserstein-regularized actor-critic experiments.
///
/// Exit codes: 0 success, 2 usage, 3 configuration, 4 runtime failure,
/// 5 a verification check failed.
#[derive(Parser)]
#[command(name = "wave", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; defaults to $WAVE_OUT, then the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, e.g. 0,1,2.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one arm per seed, or both arms with --ablate.
    Train {
        #[command(flatten)]
        common: Common,
        /// Run the regularized and plain TD3 arms with matched seeds.
        #[arg(long)]
        ablate: bool,
    },
    /// Same as `train --ablate`.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the contraction, rate and optional variance checks.
    VerifyTheory {
        #[command(flatten)]
        common: Common,
    },
    /// Time the Sinkhorn solver over problem sizes.
    SinkhornBench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64,128")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Spread of the sampled values.
        #[arg(long, default_value_t = 100.0)]
        scale: f64,
    },
    /// Render reward.svg and lambda.svg from episode CSVs or run directories.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut overrides = common.set.clone();
    if let Some(s) = &common.seeds {
        overrides.push(format!("seeds={s}"));
    }
    let cfg = ExperimentConfig::load(common.config.as_deref(), &overrides)?;
    let out = resolve_out_dir(common.out.as_deref(), &cfg.output_dir);
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let label = std::env::args().skip(1).collect::<Vec<_>>().join(" ");
    match cli.command {
        Command::Train { common, ablate } => {
            let (cfg, out) = load(&common)?;
            let report = run_train(&cfg, &out, ablate, &label)?;
            println!("wrote {}", report.summary.display());
        }
        Command::Ablate { common } => {
            let (cfg, out) = load(&common)?;
            let report = run_train(&cfg, &out, true, &label)?;
            println!("wrote {}", report.summary.display());
        }
        Command::VerifyTheory { common } => {
            let (cfg, out) = load(&common)?;
            run_verify_theory(&cfg, &out)?;
        }
        Command::SinkhornBench { common, sizes, instances, scale } => {
            let (cfg, out) = load(&common)?;
            run_sinkhorn_bench(&cfg, &out, &sizes, instances, scale)?;
        }
        Command::Plot { inputs, out } => {
            let out = resolve_out_dir(out.as_deref(), &ExperimentConfig::default().output_dir);
            for p in emit_plots(&inputs, &out).map_err(|e| CliError::Runtime(e.to_string()))? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { exit::OK as u8 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
