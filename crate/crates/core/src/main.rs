use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use condaseg::cli::{self, Invocation};

/// Domain-adaptive digit segmentation: build datasets, train, evaluate,
/// report and render translations.
#[derive(Parser)]
#[command(name = "condaseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset into the cache (a no-op when already built).
    Data(Common),
    /// Train one experiment.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the last checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a trained segmenter on the source and target test splits.
    Eval(Common),
    /// Collect evaluated runs into the result and parameter tables.
    Report(Common),
    /// Render a translation gallery from a trained generator.
    Translate {
        #[command(flatten)]
        common: Common,
        /// Images per domain.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Write the default configuration files into a directory.
    Configs {
        #[arg(default_value = "configs")]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration value, e.g. `--set lambdas.gp=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn invocation(sub: cli::Subcommand, c: Common) -> Invocation {
    Invocation {
        overrides: c.overrides,
        seed: c.seed,
        output_dir: c.output_dir,
        ..Invocation::new(sub, c.config)
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    use cli::Subcommand as S;
    let inv = match command {
        Command::Configs { dir } => {
            let written = cli::emit_default_configs(&dir).with_context(|| format!("writing configs to {}", dir.display()))?;
            println!("wrote {} configs to {}", written.len(), dir.display());
            return Ok(());
        }
        Command::Data(c) => invocation(S::Data, c),
        Command::Train { common, resume } => Invocation {
            resume,
            ..invocation(S::Train, common)
        },
        Command::Eval(c) => invocation(S::Eval, c),
        Command::Report(c) => invocation(S::Report, c),
        Command::Translate { common, count } => Invocation {
            count,
            ..invocation(S::Translate, common)
        },
    };
    cli::run(&inv).with_context(|| format!("{} with {}", inv.subcommand.as_str(), inv.config_path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .chain()
                .find_map(|e| e.downcast_ref::<condaseg::Error>())
                .map_or(1, condaseg::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
