//! `bdh` — command-line workbench for BDH / BDH-GPU models: training,
//! generation, graph-kernel equivalence checks, analysis runs, model
//! merging, and the claim-level experiments.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage errors.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "bdh", version, about = "BDH-GPU sequence-model workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run config; writes checkpoints and metrics CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Autoregressive generation from a checkpoint; prints raw bytes.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Prompt text (UTF-8 bytes), or hex with --hex.
        #[arg(long)]
        prompt: String,
        /// Interpret the prompt as hexadecimal bytes.
        #[arg(long, default_value_t = false)]
        hex: bool,
        /// Map a-z to tokens 0..26 instead of raw bytes (for small-alphabet models).
        #[arg(long, default_value_t = false)]
        letters: bool,
        #[arg(long)]
        tokens: usize,
        #[arg(long, default_value_t = 1.0)]
        temp: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional run-record directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Graph-kernel vs dense-oracle randomized suite; exit 0 iff max diff < 1e-5.
    VerifyEquivalence {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long = "layers", alias = "l", default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Model analyses; emits CSV/JSON under --out.
    Analyze {
        #[command(subcommand)]
        what: commands::AnalyzeCommand,
    },
    /// Trace one synapse over a text; writes a CSV.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        text_file: PathBuf,
        /// layer,head,i,j
        #[arg(long)]
        synapse: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank synapses separating concept texts from contrast texts.
    ConceptTest {
        #[arg(long)]
        ckpt: PathBuf,
        /// One sentence per line.
        #[arg(long)]
        positive: PathBuf,
        #[arg(long)]
        contrast: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// Candidate pool size per (layer, head).
        #[arg(long, default_value_t = 100_000)]
        candidates: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Concatenate two checkpoints along the neuron dimension.
    Merge {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Claim-level micro-experiments; emits CSV.
    Experiment {
        #[command(subcommand)]
        which: commands::ExperimentCommand,
    },
}

fn main() -> anyhow::Result<()> {
    // BDH_THREADS caps the rayon worker pool.
    if let Ok(v) = std::env::var("BDH_THREADS") {
        if let Ok(threads) = v.parse::<usize>() {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads.max(1))
                .build_global()
                .ok();
        }
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config } => commands::train(&config),
        Command::Generate { ckpt, prompt, hex, letters, tokens, temp, seed, out } => {
            commands::generate(&ckpt, &prompt, hex, letters, tokens, temp, seed, out.as_deref())
        }
        Command::VerifyEquivalence { n, d, layers, trials, seed, out } => {
            commands::verify_equivalence(n, d, layers, trials, seed, out.as_deref())
        }
        Command::Analyze { what } => commands::analyze(what),
        Command::Probe { ckpt, text_file, synapse, out } => {
            commands::probe(&ckpt, &text_file, &synapse, &out)
        }
        Command::ConceptTest { ckpt, positive, contrast, top_k, candidates, out } => {
            commands::concept_test(&ckpt, &positive, &contrast, top_k, candidates, &out)
        }
        Command::Merge { a, b, out } => commands::merge(&a, &b, &out),
        Command::Experiment { which } => commands::experiment(which),
    }
}
