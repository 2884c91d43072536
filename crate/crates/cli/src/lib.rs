//! Command-line workflow: generate corpora, pretrain the base model, probe
//! cross-lingual similarity, expand languages with soft prompts, evaluate,
//! audit forgetting, and run the full fine-tune baseline.
//!
//! Every command is reproducible: the run configuration carries every seed
//! and path, checkpoints embed that configuration, and reruns with identical
//! inputs write byte-identical artifacts.

pub mod commands;
pub mod workspace;

use clap::{Parser, Subcommand};
use promptasr_core::Error;

/// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
/// failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::ContextOverflow { .. }
        | Error::UnknownLanguage(_)
        | Error::DuplicateLanguage(_) => 1,
        Error::Format { .. }
        | Error::ChecksumMismatch { .. }
        | Error::DigestMismatch { .. }
        | Error::ShapeMismatch { .. }
        | Error::Io { .. } => 2,
        Error::NonFinite { .. } => 3,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "promptasr",
    about = "Soft-prompt language expansion for a small speech recognizer",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic multilingual corpora described by a config.
    GenData {
        #[arg(long)]
        config: std::path::PathBuf,
        /// Override the output directory (also: PROMPTASR_DATA_DIR).
        #[arg(long)]
        data_dir: Option<std::path::PathBuf>,
    },
    /// Train the base model on the base-language corpora and write a checkpoint.
    Pretrain {
        #[arg(long)]
        config: std::path::PathBuf,
        #[arg(long)]
        data_dir: Option<std::path::PathBuf>,
        /// Checkpoint path; defaults to the config's paths.checkpoint.
        #[arg(long)]
        out: Option<std::path::PathBuf>,
    },
    /// Estimate which base language a corpus resembles (vote report).
    Similarity {
        #[arg(long)]
        checkpoint: std::path::PathBuf,
        /// A corpus split file of the new language.
        #[arg(long)]
        corpus: std::path::PathBuf,
        /// Number of audio segments to sample.
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Add a language by training prompts against the frozen checkpoint.
    Expand {
        #[arg(long)]
        checkpoint: std::path::PathBuf,
        #[arg(long)]
        registry: std::path::PathBuf,
        #[arg(long)]
        tag: String,
        /// encoder | decoder | entire
        #[arg(long, default_value = "entire")]
        mode: String,
        /// off | shared | separate
        #[arg(long, default_value = "off")]
        lapt: String,
        #[arg(long)]
        n_enc: Option<usize>,
        #[arg(long)]
        n_dec: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data_dir: Option<std::path::PathBuf>,
    },
    /// Decode a split under the registry's activations and print a CER table.
    Eval {
        #[arg(long)]
        checkpoint: std::path::PathBuf,
        #[arg(long)]
        registry: std::path::PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Comma-separated language tags; defaults to every registered tag
        /// with data on disk.
        #[arg(long)]
        languages: Option<String>,
        #[arg(long)]
        data_dir: Option<std::path::PathBuf>,
    },
    /// Compare two checkpoints of the same lineage on base-language test sets.
    Audit {
        #[arg(long)]
        before: std::path::PathBuf,
        #[arg(long)]
        after: std::path::PathBuf,
        #[arg(long)]
        languages: Option<String>,
        #[arg(long)]
        data_dir: Option<std::path::PathBuf>,
    },
    /// Full fine-tune baseline: train every parameter on one language and
    /// write a separate checkpoint.
    Fft {
        #[arg(long)]
        checkpoint: std::path::PathBuf,
        #[arg(long)]
        tag: String,
        #[arg(long)]
        out: std::path::PathBuf,
        #[arg(long)]
        data_dir: Option<std::path::PathBuf>,
    },
}

pub fn run(cli: Cli) -> promptasr_core::Result<()> {
    match cli.command {
        Command::GenData { config, data_dir } => commands::gen_data(&config, data_dir.as_deref()),
        Command::Pretrain {
            config,
            data_dir,
            out,
        } => commands::pretrain(&config, data_dir.as_deref(), out.as_deref()),
        Command::Similarity {
            checkpoint,
            corpus,
            m,
            seed,
        } => commands::similarity(&checkpoint, &corpus, m, seed),
        Command::Expand {
            checkpoint,
            registry,
            tag,
            mode,
            lapt,
            n_enc,
            n_dec,
            seed,
            data_dir,
        } => commands::expand(commands::ExpandArgs {
            checkpoint: &checkpoint,
            registry: &registry,
            tag: &tag,
            mode: &mode,
            lapt: &lapt,
            n_enc,
            n_dec,
            seed,
            data_dir: data_dir.as_deref(),
        }),
        Command::Eval {
            checkpoint,
            registry,
            split,
            languages,
            data_dir,
        } => commands::eval(
            &checkpoint,
            &registry,
            &split,
            languages.as_deref(),
            data_dir.as_deref(),
        ),
        Command::Audit {
            before,
            after,
            languages,
            data_dir,
        } => commands::audit(&before, &after, languages.as_deref(), data_dir.as_deref()),
        Command::Fft {
            checkpoint,
            tag,
            out,
            data_dir,
        } => commands::fft(&checkpoint, &tag, &out, data_dir.as_deref()),
    }
}
