//! Subcommand implementations. Every command that owns an output directory
//! drops a `run.json` with the fully resolved configuration and seeds, so a
//! run can be reproduced from its artifacts alone.

use anyhow::{bail, Context, Result};
use bdh_core::analysis::{
    self, degree_distribution, element_histogram, extract_ffn_graph, filter_sigma,
    find_concept_synapses, louvain, probe_synapse, random_baseline_graphs,
    reconstruct_sigma, sparsity_trace, threshold_graph, DecoderKind,
};
use bdh_core::checkpoint::{load_checkpoint, save_checkpoint};
use bdh_core::kernel::{random_normfree_instance, verify_equivalence as kernel_verify};
use bdh_core::model::{concat_models, forward_streaming_traced, ModelParams};
use bdh_core::rng::seeded;
use bdh_core::runconfig::{RunConfig, TaskSpec};
use bdh_core::train::{
    make_interleaved_corpus, make_repetition_stream, train_with_callback, TaskStream,
};
use clap::Subcommand;
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_run_record(dir: &Path, command: &str, resolved: serde_json::Value) -> Result<()> {
    ensure_dir(dir)?;
    let record = json!({ "command": command, "resolved": resolved });
    std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

fn load_params(path: &Path) -> Result<(ModelParams, u64)> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

// ---------------------------------------------------------------- train --

pub fn train(config_path: &Path) -> Result<()> {
    let cfg = RunConfig::from_path(config_path)?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_dir(&out_dir)?;
    write_run_record(&out_dir, "train", serde_json::to_value(&cfg)?)?;

    let params = bdh_core::model::init_params(&cfg.model, cfg.init_seed)?;
    let task = cfg.task.clone();
    let train_seed = cfg.train.seed;
    let mut make_stream = move |b: u64| -> Box<dyn TaskStream> {
        match &task {
            TaskSpec::Repetition { warmup_len, word_len, reps, alphabet } => Box::new(
                make_repetition_stream(*warmup_len, *word_len, *reps, *alphabet, train_seed + b),
            ),
            TaskSpec::Corpus { file_a, lang_a, file_b, lang_b } => Box::new(
                make_interleaved_corpus(
                    Path::new(file_a),
                    lang_a,
                    Path::new(file_b),
                    lang_b,
                    train_seed + b,
                )
                .expect("corpus files validated before training"),
            ),
        }
    };

    let every = cfg.checkpoint_every;
    let out_for_ckpt = out_dir.clone();
    let result = train_with_callback(params, &mut make_stream, &cfg.train, |p, m| {
        if m.step % 50 == 0 {
            eprintln!("step {:6}  loss {:.4}  lr {:.2e}  |g| {:.3}", m.step, m.loss, m.lr, m.grad_norm);
        }
        if let Some(every) = every {
            if every > 0 && (m.step + 1) % every == 0 {
                let path = out_for_ckpt.join(format!("step{:06}.bdhc", m.step + 1));
                if let Err(e) = save_checkpoint(p, (m.step + 1) as u64, &path) {
                    eprintln!("checkpoint write failed: {e}");
                }
            }
        }
    });
    match result {
        Ok((params, metrics)) => {
            save_checkpoint(&params, cfg.train.steps as u64, &out_dir.join("final.bdhc"))?;
            let mut f = std::fs::File::create(out_dir.join("metrics.csv"))?;
            metrics.write_csv(&mut f)?;
            eprintln!(
                "done: final loss {:.4}, checkpoint at {}",
                metrics.final_loss().unwrap_or(f64::NAN),
                out_dir.join("final.bdhc").display()
            );
            Ok(())
        }
        Err(bdh_core::train::TrainError::Diverged { step, last_params }) => {
            // Keep the last finite-loss parameters on disk, then fail.
            let path = out_dir.join("diverged.bdhc");
            save_checkpoint(&last_params, step as u64, &path)?;
            bail!("training diverged at step {step}; last checkpoint saved to {}", path.display());
        }
        Err(e) => Err(e.into()),
    }
}

// ------------------------------------------------------------- generate --

#[allow(clippy::too_many_arguments)]
pub fn generate(
    ckpt: &Path,
    prompt: &str,
    hex: bool,
    letters: bool,
    tokens: usize,
    temp: f32,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let (params, _) = load_params(ckpt)?;
    let prompt_tokens: Vec<usize> = if hex {
        let cleaned: String = prompt.chars().filter(|c| !c.is_whitespace()).collect();
        if cleaned.len() % 2 != 0 {
            bail!("hex prompt must have an even number of digits");
        }
        (0..cleaned.len() / 2)
            .map(|i| usize::from_str_radix(&cleaned[2 * i..2 * i + 2], 16))
            .collect::<Result<_, _>>()
            .context("parsing hex prompt")?
    } else if letters {
        prompt
            .bytes()
            .map(|b| match b {
                b'a'..=b'z' => Ok((b - b'a') as usize),
                _ => Err(anyhow::anyhow!("--letters prompt must be a-z only")),
            })
            .collect::<Result<_>>()?
    } else {
        prompt.bytes().map(|b| b as usize).collect()
    };
    if let Some(dir) = out {
        write_run_record(
            dir,
            "generate",
            json!({
                "ckpt": ckpt.display().to_string(),
                "prompt_tokens": prompt_tokens,
                "tokens": tokens, "temp": temp, "seed": seed,
            }),
        )?;
    }
    let generated = bdh_core::model::generate(&params, &prompt_tokens, tokens, temp, seed)?;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    if letters {
        let text: String = generated.iter().map(|&t| (b'a' + t as u8) as char).collect();
        w.write_all(text.as_bytes())?;
    } else {
        let bytes: Vec<u8> = generated.iter().map(|&t| t as u8).collect();
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

// --------------------------------------------------- verify-equivalence --

pub fn verify_equivalence(
    n: usize,
    d: usize,
    layers: usize,
    trials: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let (model, init, inputs) = random_normfree_instance(n, d, layers, 12, &mut rng);
        let diff = kernel_verify(&model, &inputs, Some(&init))?;
        worst = worst.max(diff);
        if trial % 10 == 0 {
            eprintln!("trial {trial:3}: max divergence so far {worst:.3e}");
        }
    }
    if let Some(dir) = out {
        write_run_record(
            dir,
            "verify-equivalence",
            json!({"n": n, "d": d, "layers": layers, "trials": trials, "seed": seed,
                   "max_divergence": worst}),
        )?;
    }
    println!("max |kernel - oracle| over {trials} trials: {worst:.3e}");
    if worst < 1e-5 {
        Ok(())
    } else {
        bail!("equivalence violated: {worst:.3e} >= 1e-5");
    }
}

// -------------------------------------------------------------- analyze --

#[derive(Subcommand)]
pub enum AnalyzeCommand {
    /// Element histogram of a D*E block of the feed-forward graph.
    Ffn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 0)]
        head_a: usize,
        #[arg(long, default_value_t = 0)]
        head_b: usize,
        /// x or y decoder.
        #[arg(long, default_value = "x")]
        which: String,
        #[arg(long, default_value_t = 200)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold a D*E block, cluster it, and compare to matched baselines.
    Modularity {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 0)]
        head_a: usize,
        #[arg(long, default_value_t = 0)]
        head_b: usize,
        #[arg(long, default_value = "x")]
        which: String,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// In/out degree distributions of a thresholded block.
    Degrees {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 0)]
        head_a: usize,
        #[arg(long, default_value_t = 0)]
        head_b: usize,
        #[arg(long, default_value = "x")]
        which: String,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct sigma on a text; histogram + filtered degree tables.
    Sigma {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        text_file: PathBuf,
        #[arg(long, default_value_t = 1)]
        layer: usize,
        #[arg(long, default_value_t = 0)]
        head: usize,
        /// Positive threshold for the filtered graph view.
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-token non-zero y fractions, with RoPE wavelength buckets.
    Sparsity {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        text_file: Option<PathBuf>,
        /// Without a text file: this many repetition-task periods.
        #[arg(long, default_value_t = 4)]
        periods: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        buckets: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_decoder(which: &str) -> Result<DecoderKind> {
    match which {
        "x" => Ok(DecoderKind::X),
        "y" => Ok(DecoderKind::Y),
        other => bail!("--which must be x or y, got {other}"),
    }
}

fn read_text_tokens(path: &Path, vocab: usize) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let tokens: Vec<usize> = bytes.iter().map(|&b| b as usize).collect();
    if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
        bail!("byte {bad} outside model vocab {vocab}");
    }
    Ok(tokens)
}

pub fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Ffn { ckpt, head_a, head_b, which, bins, out } => {
            let (params, _) = load_params(&ckpt)?;
            let kind = parse_decoder(&which)?;
            let g = extract_ffn_graph(&params, head_a, head_b, kind)?;
            let hist = element_histogram(&g, bins)?;
            ensure_dir(&out)?;
            let mut f = std::fs::File::create(out.join("ffn_hist.csv"))?;
            writeln!(f, "bin_lo,bin_hi,count,symmetric,skew")?;
            for k in 0..hist.counts.len() {
                writeln!(
                    f,
                    "{},{},{},{},{}",
                    hist.edges[k], hist.edges[k + 1], hist.counts[k], hist.symmetric[k],
                    hist.skew[k]
                )?;
            }
            write_run_record(
                &out,
                "analyze ffn",
                json!({"ckpt": ckpt.display().to_string(), "head_a": head_a,
                       "head_b": head_b, "which": which, "bins": bins}),
            )?;
            println!("wrote {}", out.join("ffn_hist.csv").display());
            Ok(())
        }
        AnalyzeCommand::Modularity { ckpt, head_a, head_b, which, beta, seeds, seed, out } => {
            let (params, _) = load_params(&ckpt)?;
            let kind = parse_decoder(&which)?;
            let g = extract_ffn_graph(&params, head_a, head_b, kind)?;
            let nh = params.config.nh();
            let graph = threshold_graph(&g, nh, beta)?;
            let m = graph.edge_count();
            if m == 0 {
                bail!("threshold beta = {beta} leaves no edges");
            }
            let (partition, q) = louvain(&graph, seeds, seed)?;
            let (gnm, lowrank, _) = random_baseline_graphs(nh, m, params.config.d, seed)?;
            let (_, q_gnm) = louvain(&gnm, seeds, seed)?;
            let (_, q_lr) = louvain(&lowrank, seeds, seed)?;
            ensure_dir(&out)?;
            let report = analysis::ModularityReport {
                beta,
                m,
                q,
                q_gnm,
                q_lowrank: q_lr,
                partition: partition.clone(),
            };
            std::fs::write(
                out.join("modularity.json"),
                serde_json::to_string_pretty(&json!({
                    "beta": report.beta, "m": report.m, "q": report.q,
                    "q_gnm": report.q_gnm, "q_lowrank": report.q_lowrank,
                    "communities": partition.iter().copied().max().map(|x| x + 1).unwrap_or(0),
                }))?,
            )?;
            let mut f = std::fs::File::create(out.join("partition.csv"))?;
            writeln!(f, "node,community")?;
            for (node, c) in partition.iter().enumerate() {
                writeln!(f, "{node},{c}")?;
            }
            write_run_record(
                &out,
                "analyze modularity",
                json!({"ckpt": ckpt.display().to_string(), "beta": beta, "m": m,
                       "seeds": seeds, "seed": seed, "which": which,
                       "head_a": head_a, "head_b": head_b}),
            )?;
            println!("Q = {q:.4} (gnm {q_gnm:.4}, lowrank {q_lr:.4}) at m = {m}");
            Ok(())
        }
        AnalyzeCommand::Degrees { ckpt, head_a, head_b, which, beta, out } => {
            let (params, _) = load_params(&ckpt)?;
            let kind = parse_decoder(&which)?;
            let g = extract_ffn_graph(&params, head_a, head_b, kind)?;
            let nh = params.config.nh();
            let graph = threshold_graph(&g, nh, beta)?;
            let dd = degree_distribution(&graph);
            ensure_dir(&out)?;
            let mut f = std::fs::File::create(out.join("degrees.csv"))?;
            writeln!(f, "direction,degree,count")?;
            for &(deg, count) in &dd.in_hist {
                writeln!(f, "in,{deg},{count}")?;
            }
            for &(deg, count) in &dd.out_hist {
                writeln!(f, "out,{deg},{count}")?;
            }
            let mut f = std::fs::File::create(out.join("degrees_logbin.csv"))?;
            writeln!(f, "lo,hi,in_density,out_density")?;
            for b in &dd.log_binned {
                writeln!(f, "{},{},{},{}", b.lo, b.hi, b.in_density, b.out_density)?;
            }
            write_run_record(
                &out,
                "analyze degrees",
                json!({"ckpt": ckpt.display().to_string(), "beta": beta,
                       "edges": graph.edge_count()}),
            )?;
            println!("wrote degree tables for {} edges", graph.edge_count());
            Ok(())
        }
        AnalyzeCommand::Sigma { ckpt, text_file, layer, head, threshold, out } => {
            let (params, _) = load_params(&ckpt)?;
            let tokens = read_text_tokens(&text_file, params.config.vocab_size)?;
            let (_, trace) = forward_streaming_traced(&params, &tokens)?;
            let sigma = reconstruct_sigma(&trace, &params, layer, head, tokens.len())?;
            let hist = element_histogram(&sigma, 200)?;
            ensure_dir(&out)?;
            let mut f = std::fs::File::create(out.join("sigma_hist.csv"))?;
            writeln!(f, "bin_lo,bin_hi,count,symmetric,skew")?;
            for k in 0..hist.counts.len() {
                writeln!(
                    f,
                    "{},{},{},{},{}",
                    hist.edges[k], hist.edges[k + 1], hist.counts[k], hist.symmetric[k],
                    hist.skew[k]
                )?;
            }
            let nh = params.config.nh();
            let filtered = filter_sigma(&sigma, threshold);
            let graph = threshold_graph(&filtered, nh, threshold)?;
            let dd = degree_distribution(&graph);
            let mut f = std::fs::File::create(out.join("sigma_degrees.csv"))?;
            writeln!(f, "direction,degree,count")?;
            for &(deg, count) in &dd.in_hist {
                writeln!(f, "in,{deg},{count}")?;
            }
            for &(deg, count) in &dd.out_hist {
                writeln!(f, "out,{deg},{count}")?;
            }
            std::fs::write(
                out.join("sigma_summary.json"),
                serde_json::to_string_pretty(&json!({
                    "layer": layer, "head": head, "tokens": tokens.len(),
                    "threshold": threshold,
                    "nonzero_raw": sigma.iter().filter(|&&v| v != 0.0).count(),
                    "nonzero_filtered": graph.edge_count(),
                }))?,
            )?;
            write_run_record(
                &out,
                "analyze sigma",
                json!({"ckpt": ckpt.display().to_string(), "layer": layer, "head": head,
                       "threshold": threshold,
                       "text_file": text_file.display().to_string()}),
            )?;
            println!("sigma: {} filtered synapses", graph.edge_count());
            Ok(())
        }
        AnalyzeCommand::Sparsity { ckpt, text_file, periods, seed, buckets, out } => {
            let (params, _) = load_params(&ckpt)?;
            let tokens = match &text_file {
                Some(p) => read_text_tokens(p, params.config.vocab_size)?,
                None => {
                    let alphabet = params.config.vocab_size.min(26);
                    let mut s = make_repetition_stream(13, 8, 8, alphabet, seed);
                    let period = s.period_len();
                    (0..periods * period).map(|_| s.next_token()).collect()
                }
            };
            let (_, trace) = forward_streaming_traced(&params, &tokens)?;
            let sp = sparsity_trace(&trace, Some((&params, buckets)))?;
            ensure_dir(&out)?;
            let mut f = std::fs::File::create(out.join("sparsity.csv"))?;
            let layers = params.config.layers;
            write!(f, "token")?;
            for l in 0..layers {
                write!(f, ",layer{l}")?;
            }
            if let Some(bf) = &sp.bucket_fractions {
                for l in 0..layers {
                    for b in 0..bf[0][l].len() {
                        write!(f, ",l{l}_bucket{b}")?;
                    }
                }
            }
            writeln!(f)?;
            for t in 0..sp.fractions.len() {
                write!(f, "{t}")?;
                for l in 0..layers {
                    write!(f, ",{}", sp.fractions[t][l])?;
                }
                if let Some(bf) = &sp.bucket_fractions {
                    for l in 0..layers {
                        for v in &bf[t][l] {
                            write!(f, ",{v}")?;
                        }
                    }
                }
                writeln!(f)?;
            }
            write_run_record(
                &out,
                "analyze sparsity",
                json!({"ckpt": ckpt.display().to_string(), "periods": periods,
                       "seed": seed, "buckets": buckets,
                       "tokens": sp.fractions.len()}),
            )?;
            println!("wrote {} sparsity rows", sp.fractions.len());
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- probe --

pub fn probe(ckpt: &Path, text_file: &Path, synapse: &str, out: &Path) -> Result<()> {
    let (params, _) = load_params(ckpt)?;
    let parts: Vec<usize> = synapse
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .context("--synapse wants `layer,head,i,j`")?;
    if parts.len() != 4 {
        bail!("--synapse wants four comma-separated indices");
    }
    let tokens = read_text_tokens(text_file, params.config.vocab_size)?;
    let trace = probe_synapse(&params, &tokens, (parts[0], parts[1], parts[2], parts[3]))?;
    ensure_dir(out)?;
    let mut f = std::fs::File::create(out.join("probe.csv"))?;
    writeln!(f, "t,token,sigma")?;
    for (t, (&tok, &v)) in trace.tokens.iter().zip(&trace.values).enumerate() {
        writeln!(f, "{t},{tok},{v}")?;
    }
    write_run_record(
        out,
        "probe",
        json!({"ckpt": ckpt.display().to_string(), "synapse": parts,
               "text_file": text_file.display().to_string()}),
    )?;
    println!("wrote {} probe rows", trace.values.len());
    Ok(())
}

// --------------------------------------------------------- concept-test --

fn read_sentences(path: &Path, vocab: usize) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<usize> = line.bytes().map(|b| b as usize).collect();
        if let Some(&bad) = toks.iter().find(|&&t| t >= vocab) {
            bail!("byte {bad} outside model vocab {vocab} in {}", path.display());
        }
        out.push(toks);
    }
    if out.is_empty() {
        bail!("{} holds no sentences", path.display());
    }
    Ok(out)
}

pub fn concept_test(
    ckpt: &Path,
    positive: &Path,
    contrast: &Path,
    top_k: usize,
    candidates: usize,
    out: &Path,
) -> Result<()> {
    let (params, _) = load_params(ckpt)?;
    let pos = read_sentences(positive, params.config.vocab_size)?;
    let neg = read_sentences(contrast, params.config.vocab_size)?;
    let ranked = find_concept_synapses(&params, &pos, &neg, top_k, candidates)?;
    ensure_dir(out)?;
    let rows: Vec<serde_json::Value> = ranked
        .iter()
        .map(|r| {
            json!({
                "layer": r.layer, "head": r.head, "i": r.i, "j": r.j,
                "u": r.result.u, "u_max": r.result.u_max,
                "p_one_sided": r.result.p_one_sided,
                "rank_biserial": r.result.rank_biserial,
                "median_positive": r.median_positive,
            })
        })
        .collect();
    std::fs::write(
        out.join("concept.json"),
        serde_json::to_string_pretty(&json!({"synapses": rows}))?,
    )?;
    write_run_record(
        out,
        "concept-test",
        json!({"ckpt": ckpt.display().to_string(), "top_k": top_k,
               "candidates": candidates,
               "positive": positive.display().to_string(),
               "contrast": contrast.display().to_string()}),
    )?;
    for r in ranked.iter().take(5) {
        println!(
            "({},{},{},{}): U={} rb={:.3} p={:.2e}",
            r.layer, r.head, r.i, r.j, r.result.u, r.result.rank_biserial, r.result.p_one_sided
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- merge --

pub fn merge(a: &Path, b: &Path, out: &Path) -> Result<()> {
    let (pa, step_a) = load_params(a)?;
    let (pb, step_b) = load_params(b)?;
    let merged = concat_models(&pa, &pb)?;
    save_checkpoint(&merged, step_a.max(step_b), out)?;
    println!(
        "merged n = {} + {} -> {}; wrote {}",
        pa.config.n,
        pb.config.n,
        merged.config.n,
        out.display()
    );
    Ok(())
}

// ----------------------------------------------------------- experiment --

#[derive(Subcommand)]
pub enum ExperimentCommand {
    /// ReLU-lowrank Markov propagation error across ranks.
    Markov {
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        r: usize,
        /// Comma-separated rank list.
        #[arg(long, default_value = "32,64,128,256,512")]
        d_list: String,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Selective-activation overlap score vs its prediction.
    Fscore {
        #[arg(long, default_value_t = 4096)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        d: usize,
        #[arg(long, default_value_t = 64)]
        a_size: usize,
        #[arg(long, default_value_t = 64)]
        b_size: usize,
        #[arg(long, default_value_t = 16)]
        c_size: usize,
        #[arg(long, default_value_t = 200)]
        trials: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear-attention retrieval error across stored-fact counts.
    Capacity {
        #[arg(long, default_value_t = 4096)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value = "16,64,256,1024,4096")]
        t_list: String,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// LSH bucket overlap vs pair cosine.
    Lsh {
        #[arg(long, default_value_t = 256)]
        buckets: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        pairs: u64,
        #[arg(long, default_value_t = 0.25)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_list(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(|s| s.trim().parse::<usize>().context("bad list entry"))
        .collect()
}

pub fn experiment(cmd: ExperimentCommand) -> Result<()> {
    match cmd {
        ExperimentCommand::Markov { n, r, d_list, seeds, out } => {
            let ds = parse_list(&d_list)?;
            ensure_dir(&out)?;
            let mut f = std::fs::File::create(out.join("markov.csv"))?;
            writeln!(f, "d,seed,relu_bias_l1,linear_l1,epsilon_star")?;
            for &d in &ds {
                for seed in 0..seeds {
                    let res = analysis::markov_lowrank_experiment(n, r, d, seed)?;
                    writeln!(
                        f,
                        "{d},{seed},{},{},{}",
                        res.relu_bias_l1, res.linear_l1, res.epsilon_star
                    )?;
                }
            }
            write_run_record(
                &out,
                "experiment markov",
                json!({"n": n, "r": r, "d_list": ds, "seeds": seeds}),
            )?;
            println!("wrote {}", out.join("markov.csv").display());
            Ok(())
        }
        ExperimentCommand::Fscore { n, d, a_size, b_size, c_size, trials, out } => {
            ensure_dir(&out)?;
            let mut f = std::fs::File::create(out.join("fscore.csv"))?;
            writeln!(f, "trial,w,rho,abs_err")?;
            for t in 0..trials {
                let (w, rho) = analysis::fscore_experiment(a_size, b_size, c_size, n, d, t)?;
                writeln!(f, "{t},{w},{rho},{}", (w - rho).abs())?;
            }
            write_run_record(
                &out,
                "experiment fscore",
                json!({"n": n, "d": d, "a": a_size, "b": b_size, "c": c_size,
                       "trials": trials}),
            )?;
            println!("wrote {}", out.join("fscore.csv").display());
            Ok(())
        }
        ExperimentCommand::Capacity { n, d, t_list, seeds, out } => {
            let ts = parse_list(&t_list)?;
            ensure_dir(&out)?;
            let mut f = std::fs::File::create(out.join("capacity.csv"))?;
            writeln!(f, "t,seed,mean_l2_error")?;
            for &t in &ts {
                for seed in 0..seeds {
                    let err = analysis::attention_capacity_experiment(
                        n,
                        d,
                        t,
                        seed,
                        analysis::KeyMode::RandomProjection,
                    )?;
                    writeln!(f, "{t},{seed},{err}")?;
                }
            }
            write_run_record(
                &out,
                "experiment capacity",
                json!({"n": n, "d": d, "t_list": ts, "seeds": seeds}),
            )?;
            println!("wrote {}", out.join("capacity.csv").display());
            Ok(())
        }
        ExperimentCommand::Lsh { buckets, dim, pairs, threshold, out } => {
            ensure_dir(&out)?;
            let mut f = std::fs::File::create(out.join("lsh.csv"))?;
            writeln!(f, "pair,cosine_target,overlap")?;
            let mut rng = seeded(11);
            use rand::Rng;
            use rand_distr::StandardNormal;
            for p in 0..pairs {
                let dirs = analysis::lsh_random_directions(buckets, dim, &mut rng);
                for (tag, blend) in [("near", 0.33f64), ("far", f64::INFINITY)] {
                    let unit = |v: &mut Vec<f64>| {
                        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        for x in v.iter_mut() {
                            *x /= n;
                        }
                    };
                    let mut a: Vec<f64> =
                        (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    unit(&mut a);
                    let mut b: Vec<f64> = if blend.is_finite() {
                        a.iter()
                            .map(|x| x + blend * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    } else {
                        (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
                    };
                    unit(&mut b);
                    let ba = analysis::lsh_bucketize(&a, &dirs, threshold);
                    let bb = analysis::lsh_bucketize(&b, &dirs, threshold);
                    let overlap: f64 = ba.iter().zip(&bb).map(|(x, y)| x * y).sum();
                    writeln!(f, "{p},{tag},{overlap}")?;
                }
            }
            write_run_record(
                &out,
                "experiment lsh",
                json!({"buckets": buckets, "dim": dim, "pairs": pairs,
                       "threshold": threshold}),
            )?;
            println!("wrote {}", out.join("lsh.csv").display());
            Ok(())
        }
    }
}
