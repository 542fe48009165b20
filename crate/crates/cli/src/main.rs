//! `empalign` - the five-stage pipeline driver.
//!
//! Subcommands: `train-identifiers`, `finetune`, `train-rl`, `evaluate`,
//! `generate`. Stage outputs live under `--output-dir` in conventional
//! subdirectories (`identifiers/`, `generator/`, `rl/`, `eval/`) so the
//! stages compose without extra flags.
//!
//! Exit codes: 0 success, 2 input validation, 3 missing prerequisite,
//! 4 training divergence.

mod commands;
mod errors;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use empalign::RunConfig;
use errors::CliError;

#[derive(Parser)]
#[command(name = "empalign", version, about = "Empathy-level alignment pipeline")]
struct Cli {
    /// Configuration file (TOML); flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override every stage seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Root directory for stage artifacts.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Ablation {
    /// Full reward: empathy + KL penalty.
    None,
    /// Remove the KL penalty term from the reward.
    NoKl,
    /// Remove the empathy reward from the reward.
    NoEmpathy,
}

#[derive(Subcommand)]
enum Command {
    /// Train the three per-mechanism empathy identifiers.
    TrainIdentifiers,
    /// Supervised fine-tuning of the generator.
    Finetune,
    /// PPO training against the empathy + KL reward.
    TrainRl {
        #[arg(long, value_enum, default_value_t = Ablation::None)]
        ablation: Ablation,
        /// Continue from the latest checkpoint under rl/checkpoints.
        #[arg(long)]
        resume: bool,
    },
    /// Generate on the test split and report PPL, Dist-1/2, and Emp-F1.
    Evaluate {
        /// Model checkpoint directory; defaults to rl/policy, then
        /// generator/.
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Generate a single response for a context.
    Generate {
        /// Dialogue context; read from stdin when omitted.
        #[arg(long)]
        context: Option<String>,
        /// Greedy decoding (top-k = 1).
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(CliError::validation)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    check_device(&cfg)?;
    Ok(cfg)
}

fn check_device(cfg: &RunConfig) -> Result<(), CliError> {
    let device = std::env::var("EMPALIGN_DEVICE").unwrap_or_else(|_| cfg.device.clone());
    if device.to_lowercase() != "cpu" {
        return Err(CliError::validation(format!(
            "unsupported device `{device}`: this build runs on cpu only"
        )));
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| match &cli.command {
        Command::TrainIdentifiers => commands::train_identifiers(&cfg),
        Command::Finetune => commands::finetune(&cfg),
        Command::TrainRl { ablation, resume } => commands::train_rl(&cfg, *ablation, *resume),
        Command::Evaluate { model_dir } => commands::evaluate(&cfg, model_dir.as_deref()),
        Command::Generate {
            context,
            greedy,
            model_dir,
        } => commands::generate(&cfg, context.as_deref(), *greedy, model_dir.as_deref()),
    });
    match result {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code() as i32);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use errors::ExitCode;

    #[test]
    fn cli_parses_subcommands() {
        Cli::try_parse_from(["empalign", "train-identifiers"]).unwrap();
        Cli::try_parse_from(["empalign", "train-rl", "--ablation", "no-kl"]).unwrap();
        Cli::try_parse_from(["empalign", "evaluate", "--output-dir", "/tmp/x"]).unwrap();
        let cli =
            Cli::try_parse_from(["empalign", "--seed", "7", "generate", "--context", "hi"]).unwrap();
        assert_eq!(cli.seed, Some(7));
    }

    #[test]
    fn exit_codes_are_pinned() {
        assert_eq!(ExitCode::Validation as i32, 2);
        assert_eq!(ExitCode::MissingPrerequisite as i32, 3);
        assert_eq!(ExitCode::Divergence as i32, 4);
    }
}
