use std::path::PathBuf;
use std::process::ExitCode;

use bitswap_core::coding::SchemeId;
use bitswap_core::experiment::DEFAULT_SEED_WORDS;
use bitswap_cli::commands::{self, CompressArgs, FamilyArg, GenModelArgs};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bitswap", version, about = "Bits-back compression with BB-ANS and Bit-Swap")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress raw symbols (one byte each, D per datapoint) into a container.
    Compress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "bitswap")]
        scheme: SchemeId,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Number of pseudo-random 32-bit words seeding the stream.
        #[arg(long, default_value_t = DEFAULT_SEED_WORDS)]
        seed_words: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write a per-op CSV trace of the encoder.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Restore the raw symbols from a container and verify the seeded buffer.
    Decompress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a synthetic model file.
    GenModel {
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long)]
        depth: usize,
        /// `D,d` (every latent layer gets `d`) or `D,d1,...,dL`.
        #[arg(long, value_delimiter = ',', default_value = "2,2")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Coding precision in bits; defaults to 12 for tabular and 16 for affine-logistic.
        #[arg(long)]
        precision: Option<u32>,
        /// Tabular alphabet size (a power of two up to 16).
        #[arg(long, default_value_t = 16)]
        alphabet: usize,
        /// Tabular: blend of the inference tables toward uniform.
        #[arg(long, default_value_t = 0.0)]
        mismatch: f64,
        /// Affine-logistic: bins per latent dimension.
        #[arg(long, default_value_t = 256)]
        bins: usize,
    },
    /// Run repeated chained compressions described by a TOML config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print a model's layers, grids and table entropies.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = std::io::stdout().lock();
    let result = match cli.command {
        Command::Compress {
            model,
            scheme,
            input,
            output,
            seed_words,
            seed,
            trace,
        } => commands::compress(
            &CompressArgs {
                model,
                scheme,
                input,
                output,
                seed_words,
                seed,
                trace,
            },
            &mut out,
        ),
        Command::Decompress {
            model,
            input,
            output,
        } => commands::decompress(&model, &input, &output, &mut out),
        Command::GenModel {
            family,
            depth,
            dims,
            seed,
            out: path,
            precision,
            alphabet,
            mismatch,
            bins,
        } => commands::gen_model(
            &GenModelArgs {
                family,
                depth,
                dims,
                seed,
                out: path,
                precision,
                alphabet,
                mismatch,
                bins,
            },
            &mut out,
        ),
        Command::Experiment { config } => commands::experiment(&config, &mut out),
        Command::Inspect { model } => commands::inspect(&model, &mut out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
