mod config;
mod selfcheck;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use capnet_core::data::{load_annotations, load_features};
use capnet_core::decode::beam_search;
use capnet_core::metrics::{corpus_pooled_bleu, sentence_bleu};
use capnet_core::model::{Dims, ModelParams};
use capnet_core::train::{
    load_checkpoint, run_epoch, save_checkpoint, validate_checkpoint, Checkpoint, OptimizerKind,
    TrainConfig, TrainState, CHECKPOINT_VERSION,
};
use capnet_core::vocab::{tokenize, Vocabulary};
use capnet_core::CaptionedExample;
use config::{merge, FileConfig};

#[derive(Parser)]
#[command(name = "capnet", version, about = "Encoder-decoder LSTM image captioning")]
struct Cli {
    /// Master seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker count cap (computation is currently serial; kept at 1 for
    /// bit-reproducibility).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Optional TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from COCO-style annotations.
    BuildVocab {
        #[arg(long)]
        annotations: PathBuf,
        /// Minimum corpus frequency for a token to enter the vocabulary.
        #[arg(long)]
        min_count: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus a loss-history CSV.
    Train {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        loss_csv: PathBuf,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long, value_enum)]
        optimizer: Option<OptimizerArg>,
        /// Global gradient-norm clip; 0 disables clipping.
        #[arg(long)]
        grad_clip_norm: Option<f64>,
        /// Write an intermediate checkpoint every N epochs (0 = only final).
        #[arg(long)]
        checkpoint_every: Option<u64>,
        #[arg(long)]
        embed_dim: Option<usize>,
        #[arg(long)]
        hidden_dim: Option<usize>,
    },
    /// Generate captions for a feature table with beam search.
    Caption {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Restrict to these image ids (comma-separated); default all.
        #[arg(long, value_delimiter = ',')]
        image_ids: Option<Vec<i64>>,
        #[arg(long)]
        beam_width: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score generated captions against reference annotations with BLEU.
    Evaluate {
        /// Captions JSON produced by `caption`.
        #[arg(long, conflicts_with = "pairs")]
        captions: Option<PathBuf>,
        /// Annotations supplying references (required with --captions).
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Alternative input: JSON list of {image_id, candidate, references}.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Highest n-gram order.
        #[arg(long)]
        max_n: Option<usize>,
        /// Also report canonical pooled-counts corpus BLEU.
        #[arg(long)]
        pooled: bool,
        /// Score the built-in published-sentence fixture and print the
        /// computed scores next to the published 63/77.
        #[arg(long)]
        paper_fixture: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in verification suite: gradient checks, beam-search
    /// oracle, BLEU fixtures.
    Selfcheck {
        /// Debug hook: corrupt the analytic gradients so the gradient check
        /// must fail (negative control).
        #[arg(long)]
        corrupt_gradients: bool,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAPNET_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file_cfg = FileConfig::load(cli.config.as_deref())?;
    let seed = merge(cli.seed, file_cfg.seed, 0);
    let threads = merge(cli.threads, file_cfg.threads, 1);
    if threads > 1 {
        warn!("--threads {threads} requested; computation is serial, proceeding single-threaded");
    }
    match cli.command {
        Command::BuildVocab {
            annotations,
            min_count,
            out,
        } => cmd_build_vocab(
            &annotations,
            merge(min_count, file_cfg.min_count, 4),
            &out,
        ),
        Command::Train {
            annotations,
            features,
            vocab,
            out_checkpoint,
            loss_csv,
            resume,
            epochs,
            batch_size,
            learning_rate,
            optimizer,
            grad_clip_norm,
            checkpoint_every,
            embed_dim,
            hidden_dim,
        } => {
            let opt_kind = match merge(
                optimizer,
                file_cfg.optimizer.as_deref().map(|s| match s {
                    "sgd" => OptimizerArg::Sgd,
                    _ => OptimizerArg::Adam,
                }),
                OptimizerArg::Adam,
            ) {
                OptimizerArg::Sgd => OptimizerKind::Sgd,
                OptimizerArg::Adam => OptimizerKind::Adam {
                    beta1: file_cfg.adam_beta1.unwrap_or(0.9),
                    beta2: file_cfg.adam_beta2.unwrap_or(0.999),
                    eps: file_cfg.adam_eps.unwrap_or(1e-8),
                },
            };
            let clip = merge(grad_clip_norm, file_cfg.grad_clip_norm, 5.0);
            let train_config = TrainConfig {
                epochs: merge(epochs, file_cfg.epochs, 100),
                batch_size: merge(batch_size, file_cfg.batch_size, 8),
                learning_rate: merge(learning_rate, file_cfg.learning_rate, 1e-3),
                optimizer: opt_kind,
                grad_clip_norm: if clip == 0.0 { None } else { Some(clip) },
                seed,
                checkpoint_every: merge(checkpoint_every, file_cfg.checkpoint_every, 0),
            };
            cmd_train(CmdTrainArgs {
                annotations: &annotations,
                features: &features,
                vocab: &vocab,
                out_checkpoint: &out_checkpoint,
                loss_csv: &loss_csv,
                resume: resume.as_deref(),
                embed_dim: merge(embed_dim, file_cfg.embed_dim, 256),
                hidden_dim: merge(hidden_dim, file_cfg.hidden_dim, 256),
                config: train_config,
            })
        }
        Command::Caption {
            checkpoint,
            vocab,
            features,
            image_ids,
            beam_width,
            max_len,
            out,
        } => cmd_caption(
            &checkpoint,
            &vocab,
            &features,
            image_ids,
            merge(beam_width, file_cfg.beam_width, 3),
            merge(max_len, file_cfg.max_len, 20),
            &out,
        ),
        Command::Evaluate {
            captions,
            annotations,
            pairs,
            max_n,
            pooled,
            paper_fixture,
            out,
        } => cmd_evaluate(
            captions.as_deref(),
            annotations.as_deref(),
            pairs.as_deref(),
            merge(max_n, file_cfg.max_n, 4),
            pooled,
            paper_fixture,
            out.as_deref(),
        ),
        Command::Selfcheck { corrupt_gradients } => selfcheck::run(seed, corrupt_gradients),
    }
}

fn cmd_build_vocab(annotations: &Path, min_count: u64, out: &Path) -> anyhow::Result<()> {
    let records = load_annotations(annotations).context("loading annotations")?;
    let captions: Vec<String> = records.into_iter().map(|(_, c)| c).collect();
    let vocab = Vocabulary::build(&captions, min_count).context("building vocabulary")?;
    vocab.save(out).context("writing vocabulary file")?;
    let coverage = vocab.coverage(&captions);
    println!(
        "vocabulary: {} tokens (min_count {}), coverage {:.2}%",
        vocab.len(),
        min_count,
        coverage * 100.0
    );
    if vocab.len() == 3 {
        warn!("vocabulary contains only the reserved symbols; min_count {min_count} exceeds every token frequency");
    }
    Ok(())
}

struct CmdTrainArgs<'a> {
    annotations: &'a Path,
    features: &'a Path,
    vocab: &'a Path,
    out_checkpoint: &'a Path,
    loss_csv: &'a Path,
    resume: Option<&'a Path>,
    embed_dim: usize,
    hidden_dim: usize,
    config: TrainConfig,
}

fn build_examples(
    annotations: &Path,
    features: &Path,
    vocab: &Vocabulary,
) -> anyhow::Result<(Vec<CaptionedExample>, usize)> {
    let records = load_annotations(annotations).context("loading annotations")?;
    let table = load_features(features).context("loading features")?;
    let mut missing = BTreeSet::new();
    let mut examples = Vec::with_capacity(records.len());
    for (image_id, caption) in records {
        match table.get(image_id) {
            None => {
                missing.insert(image_id);
            }
            Some(feature) => examples.push(CaptionedExample {
                image_id,
                feature: feature.clone(),
                caption_ids: vocab.encode(&tokenize(&caption)),
            }),
        }
    }
    if !missing.is_empty() {
        bail!("annotations reference image ids with no feature row: {missing:?}");
    }
    Ok((examples, table.d()))
}

fn cmd_train(args: CmdTrainArgs) -> anyhow::Result<()> {
    let vocab = Vocabulary::load(args.vocab).context("loading vocabulary")?;
    let vocab_hash = vocab.hash();
    let (examples, d) = build_examples(args.annotations, args.features, &vocab)?;
    if examples.is_empty() {
        bail!("no training examples");
    }
    let dims = Dims {
        d,
        e: args.embed_dim,
        h: args.hidden_dim,
        v: vocab.len(),
    };
    info!(
        "training config: dims {dims:?}, {} examples, {:?}",
        examples.len(),
        args.config
    );

    let mut state = match args.resume {
        None => TrainState::fresh(ModelParams::init(dims, args.config.seed), &args.config),
        Some(path) => {
            let ckpt = load_checkpoint(path).context("loading resume checkpoint")?;
            validate_checkpoint(&ckpt, Some(dims), &vocab_hash)
                .context("resume checkpoint rejected")?;
            TrainState {
                params: ckpt.params,
                opt: ckpt.opt,
                epoch: ckpt.epoch,
            }
        }
    };

    let write_ckpt = |state: &TrainState, path: &Path| -> anyhow::Result<()> {
        save_checkpoint(
            path,
            &Checkpoint {
                version: CHECKPOINT_VERSION,
                dims,
                vocab_hash,
                epoch: state.epoch,
                seed: args.config.seed,
                params: state.params.clone(),
                opt: state.opt.clone(),
            },
        )?;
        Ok(())
    };

    let mut csv = String::from("epoch,mean_per_token_loss\n");
    if args.resume.is_some() && args.loss_csv.exists() {
        // keep earlier epochs when resuming into the same CSV
        csv = std::fs::read_to_string(args.loss_csv)?;
    }
    while state.epoch < args.config.epochs {
        let loss = run_epoch(&mut state, &examples, &args.config)
            .context("training aborted")?;
        csv.push_str(&format!("{},{}\n", state.epoch, loss));
        info!("epoch {}: mean per-token loss {:.6}", state.epoch, loss);
        if args.config.checkpoint_every > 0 && state.epoch % args.config.checkpoint_every == 0 {
            write_ckpt(&state, args.out_checkpoint)?;
        }
    }
    write_ckpt(&state, args.out_checkpoint)?;
    std::fs::write(args.loss_csv, csv)?;
    println!(
        "trained to epoch {}; checkpoint {}",
        state.epoch,
        args.out_checkpoint.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CaptionRecord {
    image_id: i64,
    caption: String,
    log_prob: f64,
}

fn cmd_caption(
    checkpoint: &Path,
    vocab_path: &Path,
    features: &Path,
    image_ids: Option<Vec<i64>>,
    beam_width: usize,
    max_len: usize,
    out: &Path,
) -> anyhow::Result<()> {
    let vocab = Vocabulary::load(vocab_path).context("loading vocabulary")?;
    let ckpt = load_checkpoint(checkpoint).context("loading checkpoint")?;
    validate_checkpoint(&ckpt, None, &vocab.hash()).context("checkpoint rejected")?;
    if ckpt.dims.v != vocab.len() {
        bail!(
            "checkpoint vocabulary size {} != vocabulary file size {}",
            ckpt.dims.v,
            vocab.len()
        );
    }
    let table = load_features(features).context("loading features")?;
    if table.is_empty() {
        bail!("feature file contains no images");
    }
    if table.d() != ckpt.dims.d {
        bail!(
            "feature dimension {} != checkpoint dimension {}",
            table.d(),
            ckpt.dims.d
        );
    }
    let ids: Vec<i64> = match image_ids {
        None => table.ids().to_vec(),
        Some(requested) => {
            let unknown: Vec<i64> = requested
                .iter()
                .copied()
                .filter(|id| table.get(*id).is_none())
                .collect();
            if !unknown.is_empty() {
                bail!("requested image ids not in feature file: {unknown:?}");
            }
            requested
        }
    };
    let mut records = Vec::with_capacity(ids.len());
    for id in ids {
        let result = beam_search(&ckpt.params, table.get(id).unwrap(), beam_width, max_len)?;
        let (tokens, log_prob) = result.best();
        records.push(CaptionRecord {
            image_id: id,
            caption: vocab.decode(tokens)?,
            log_prob: *log_prob,
        });
    }
    std::fs::write(out, serde_json::to_string_pretty(&records)?)?;
    println!("wrote {} captions to {}", records.len(), out.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EvalPair {
    image_id: i64,
    candidate: String,
    references: Vec<String>,
}

#[derive(Serialize)]
struct PerImageReport {
    image_id: i64,
    candidate: String,
    score: f64,
    precisions: Vec<[u64; 2]>,
    brevity_penalty: f64,
    candidate_len: usize,
    effective_ref_len: usize,
}

#[derive(Serialize)]
struct EvalSettings {
    max_n: usize,
    smoothing: &'static str,
    aggregate: &'static str,
    tokenizer: &'static str,
}

#[derive(Serialize)]
struct EvalReport {
    settings: EvalSettings,
    per_image: Vec<PerImageReport>,
    /// Arithmetic mean of per-image sentence BLEU, 0-100.
    average_bleu: f64,
    /// Canonical pooled-counts corpus BLEU, 0-100 (with --pooled).
    #[serde(skip_serializing_if = "Option::is_none")]
    pooled_bleu: Option<f64>,
}

fn collect_pairs(
    captions: Option<&Path>,
    annotations: Option<&Path>,
    pairs: Option<&Path>,
) -> anyhow::Result<Vec<EvalPair>> {
    if let Some(path) = pairs {
        let text = std::fs::read_to_string(path).context("reading pairs file")?;
        return Ok(serde_json::from_str(&text).context("parsing pairs file")?);
    }
    let captions = captions.context("either --captions or --pairs is required")?;
    let annotations =
        annotations.context("--annotations is required when scoring a captions file")?;
    let text = std::fs::read_to_string(captions).context("reading captions file")?;
    let records: Vec<CaptionRecord> =
        serde_json::from_str(&text).context("parsing captions file")?;
    let refs = load_annotations(annotations).context("loading annotations")?;
    let mut by_image: BTreeMap<i64, Vec<String>> = BTreeMap::new();
    for (id, caption) in refs {
        by_image.entry(id).or_default().push(caption);
    }
    let missing: Vec<i64> = records
        .iter()
        .map(|r| r.image_id)
        .filter(|id| !by_image.contains_key(id))
        .collect();
    if !missing.is_empty() {
        bail!("captioned image ids with no reference captions: {missing:?}");
    }
    Ok(records
        .into_iter()
        .map(|r| EvalPair {
            image_id: r.image_id,
            candidate: r.caption,
            references: by_image[&r.image_id].clone(),
        })
        .collect())
}

fn cmd_evaluate(
    captions: Option<&Path>,
    annotations: Option<&Path>,
    pairs: Option<&Path>,
    max_n: usize,
    pooled: bool,
    paper_fixture: bool,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    if paper_fixture {
        println!("published-sentence comparison fixture (max_n={max_n}, no smoothing, per-sentence):");
        for fx in &capnet_core::fixtures::PAPER_FIXTURES {
            let report = fx.score(max_n)?;
            println!(
                "  {:-18} computed {:>6.1}  published {:>5.1}  (p_n = {:?}, BP {:.4})",
                fx.name,
                report.score * 100.0,
                fx.published_score,
                report.precisions,
                report.brevity_penalty,
            );
        }
        println!("(published scores come from full-scale training with an unspecified BLEU variant; equality is not expected)");
        if captions.is_none() && pairs.is_none() {
            return Ok(());
        }
    }

    let eval_pairs = collect_pairs(captions, annotations, pairs)?;
    if eval_pairs.is_empty() {
        bail!("nothing to evaluate");
    }
    let tokenized: Vec<(Vec<String>, Vec<Vec<String>>)> = eval_pairs
        .iter()
        .map(|p| {
            (
                tokenize(&p.candidate),
                p.references.iter().map(|r| tokenize(r)).collect(),
            )
        })
        .collect();
    let mut per_image = Vec::with_capacity(eval_pairs.len());
    let mut sum = 0.0;
    for (pair, (cand, refs)) in eval_pairs.iter().zip(&tokenized) {
        let report = sentence_bleu(cand, refs, max_n)?;
        sum += report.score;
        per_image.push(PerImageReport {
            image_id: pair.image_id,
            candidate: pair.candidate.clone(),
            score: report.score,
            precisions: report.precisions.iter().map(|&(c, t)| [c, t]).collect(),
            brevity_penalty: report.brevity_penalty,
            candidate_len: report.candidate_len,
            effective_ref_len: report.effective_ref_len,
        });
    }
    let report = EvalReport {
        settings: EvalSettings {
            max_n,
            smoothing: "none",
            aggregate: "per-image-average",
            tokenizer: "lowercase-whitespace-strip-punct",
        },
        average_bleu: 100.0 * sum / per_image.len() as f64,
        pooled_bleu: if pooled {
            Some(corpus_pooled_bleu(&tokenized, max_n)?)
        } else {
            None
        },
        per_image,
    };
    let json = serde_json::to_string_pretty(&report)?;
    match out {
        Some(path) => {
            std::fs::write(path, &json)?;
            println!(
                "average BLEU {:.2} over {} images; report at {}",
                report.average_bleu,
                report.per_image.len(),
                path.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}
