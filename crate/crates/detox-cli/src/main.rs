//! `detox`: build and evaluate step-by-step detoxification chain corpora.

mod commands;
mod config;
mod ingest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{FileConfig, FlagOverrides};
use ingest::SourceFormat;

#[derive(Parser)]
#[command(
    name = "detox",
    version,
    about = "Construct step-by-step detoxification chain corpora and evaluate chain outputs"
)]
struct Cli {
    /// TOML config file; flags override file values, file values override
    /// defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed recorded in every artifact; drives all shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Span length and convolution stride, in tokens.
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Toxic-span detection threshold.
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Max regeneration attempts per stage (K).
    #[arg(long = "max-iters", global = true)]
    max_iters: Option<usize>,

    /// Nucleus sampling top-p.
    #[arg(long = "top-p", global = true)]
    top_p: Option<f64>,

    /// Sampling temperature.
    #[arg(long, global = true)]
    temperature: Option<f64>,

    /// Continuations sampled per prompt during evaluation.
    #[arg(long = "num-samples", global = true)]
    num_samples: Option<usize>,

    /// Oracle backend: mock or remote.
    #[arg(long, global = true)]
    oracle: Option<String>,

    /// Placeholder literal substituted for masked spans.
    #[arg(long, global = true)]
    placeholder: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a prompts dataset and assign the train/test split.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: SourceFormat,
        #[arg(long)]
        output: PathBuf,
    },
    /// Construct a chain corpus with local models and oracles.
    BuildChains {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Lexicon JSON for the mock toxicity oracle.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Construct a chain corpus by driving a completion API through the
    /// designed prompts.
    BuildChainsApi {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Scripted chat answers (JSON array) for offline runs.
        #[arg(long = "chat-script")]
        chat_script: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Train the span toxicity model.
    TrainSpan {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Probability of inserting a bank span into each training sample.
        #[arg(long = "augment-rate", default_value_t = 0.0)]
        augment_rate: f64,
        /// Span bank JSON: array of {text, toxicity}.
        #[arg(long = "span-bank")]
        span_bank: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Snap soft labels to {0, 1} before training.
        #[arg(long)]
        binarize: bool,
    },
    /// Score texts and list detected toxic spans.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output path; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compute the corpus-level metric report for sampled generations.
    Evaluate {
        #[arg(long)]
        generations: PathBuf,
        /// Prompts file providing gold toxicity for the subset split.
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Parse model chain outputs leniently and grade each sub-step.
    GradeChains {
        /// JSON-lines of {id, chain_text}.
        #[arg(long)]
        outputs: PathBuf,
        /// Gold chain corpus (the build-chains output format).
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Parse one chain text and pretty-print the result.
    ParseChain {
        #[arg(long)]
        text: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
        /// Recover what is possible instead of requiring an exact match.
        #[arg(long)]
        lenient: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = cli.config.as_deref().map(FileConfig::load).transpose()?;
    let flags = FlagOverrides {
        seed: cli.seed,
        k: cli.k,
        lambda: cli.lambda,
        max_iters: cli.max_iters,
        placeholder: cli.placeholder.clone(),
        top_p: cli.top_p,
        temperature: cli.temperature,
        num_samples: cli.num_samples,
        oracle: cli.oracle.clone(),
    };
    let config = config::resolve(file, &flags)?;
    config.pipeline.validate()?;

    match &cli.command {
        Command::Ingest {
            input,
            format,
            output,
        } => commands::cmd_ingest(&config, input, *format, output),
        Command::BuildChains {
            input,
            output,
            lexicon,
        } => commands::cmd_build_chains(&config, input, output, lexicon.as_deref()),
        Command::BuildChainsApi {
            input,
            output,
            chat_script,
            lexicon,
        } => commands::cmd_build_chains_api(
            &config,
            input,
            output,
            chat_script.as_deref(),
            lexicon.as_deref(),
        ),
        Command::TrainSpan {
            input,
            output,
            epochs,
            augment_rate,
            span_bank,
            lexicon,
            binarize,
        } => commands::cmd_train_span(
            &config,
            input,
            output,
            *epochs,
            *augment_rate,
            span_bank.as_deref(),
            lexicon.as_deref(),
            *binarize,
        ),
        Command::Detect {
            checkpoint,
            input,
            output,
        } => commands::cmd_detect(&config, checkpoint, input, output.as_deref()),
        Command::Evaluate {
            generations,
            prompts,
            output,
        } => commands::cmd_evaluate(&config, generations, prompts.as_deref(), output.as_deref()),
        Command::GradeChains {
            outputs,
            gold,
            lexicon,
            output,
        } => commands::cmd_grade_chains(
            &config,
            outputs,
            gold,
            lexicon.as_deref(),
            output.as_deref(),
        ),
        Command::ParseChain {
            text,
            file,
            lenient,
        } => commands::cmd_parse_chain(&config, text.clone(), file.as_deref(), *lenient),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Machine-readable error on stderr.
            let payload = serde_json::json!({
                "error": {
                    "message": err.to_string(),
                    "chain": err.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
                }
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
