use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsim_cli::{parse_config, run, CliError};
use fedsim_core::aggregation::AfaHyperParams;
use fedsim_core::simulator::AggregatorKind;

#[derive(Parser)]
#[command(
    name = "fedsim",
    about = "Deterministic federated-learning round simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config, once per seed.
    Run {
        /// Path to the experiment config (TOML).
        config: PathBuf,
        /// Comma-separated seed list; defaults to the config's seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Output directory for metrics, summary and manifest.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Override the config's aggregation rule (afa, fa, mkrum, comed).
        #[arg(long)]
        aggregator: Option<String>,
        /// Override the config's round count.
        #[arg(long)]
        rounds: Option<usize>,
    },
}

fn execute() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config: config_path,
            seeds,
            out,
            aggregator,
            rounds,
        } => {
            let mut config = parse_config(&config_path)?;
            if let Some(rule) = aggregator {
                config.aggregator = match rule.as_str() {
                    "afa" => AggregatorKind::Afa(match &config.aggregator {
                        AggregatorKind::Afa(hyper) => *hyper,
                        _ => AfaHyperParams::default(),
                    }),
                    "fa" => AggregatorKind::Fa,
                    "mkrum" => AggregatorKind::Mkrum { f: None, m: None },
                    "comed" => AggregatorKind::Comed,
                    other => {
                        return Err(CliError::Config(format!(
                            "--aggregator: unknown rule `{other}`"
                        )))
                    }
                };
            }
            if let Some(rounds) = rounds {
                config.rounds = rounds;
            }
            config
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;

            let seeds = if seeds.is_empty() {
                vec![config.seed]
            } else {
                seeds
            };
            run(&config, &config_path, &seeds, &out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
