use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lstree::{ClassIndex, DistanceMode, MaskMode, OracleSpec};

mod run;

/// Word and node attribution for text classifiers over parse trees.
#[derive(Debug, Parser)]
#[command(name = "lstree", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One importance score per word.
    Values {
        #[command(flatten)]
        common: Common,
    },
    /// Interaction score for every node.
    Interactions {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "both")]
        distance: DistanceMode,
        /// Print each tree with its scores instead of (or, with --out, besides) the JSON lines.
        #[arg(long)]
        render: bool,
    },
    /// Correlation with a linear model, top-node depths and marker ratios.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// Reference coefficients (word<TAB>weight). Defaults to the lexicon of a builtin-linear model.
        #[arg(long)]
        coefficients: Option<PathBuf>,
        /// Comma-separated marker phrases.
        #[arg(long, value_delimiter = ',')]
        markers: Option<Vec<String>>,
    },
    /// Permutation test on train/test score variance.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON-lines corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// builtin-linear:LEXICON, builtin-negation[:LEXICON] or exec:CMD
    #[arg(long)]
    model: OracleSpec,
    #[arg(long, default_value = "pad")]
    mask_mode: MaskMode,
    #[arg(long, default_value = "[PAD]")]
    mask_token: String,
    /// A class number or `auto` (argmax on the full sentence).
    #[arg(long, default_value = "auto")]
    class_index: ClassIndex,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write JSON lines here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seconds to wait for an external model response.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run::execute(cli.command) {
        Ok(run::Outcome::Complete) => ExitCode::SUCCESS,
        Ok(run::Outcome::Partial(n)) => {
            log::error!("{n} instance(s) failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
