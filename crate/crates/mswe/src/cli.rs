//! Command-line front end: preprocess -> build-vocab -> train-lda -> train
//! -> eval-sim / eval-analogy, composed through files only.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{encode_token_file, preprocess_text, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{
    run_analogy_eval, run_similarity_eval, AnalogyDataset, DeltaMode, SimilarityDataset,
    SimilarityMetric,
};
use crate::lda::{train_online_lda, LdaConfig, TopicModel};
use crate::model_io::{load_bundle, save_bundle, ModelBundle};
use crate::trainer::{train_with_stats, TrainingConfig, Variant};

#[derive(Parser)]
#[command(
    name = "mswe",
    about = "Multi-sense word embeddings: training and evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lowercase, strip punctuation, map numbers to 0; one document per line.
    Preprocess(PreprocessArgs),
    /// Count tokens and keep the most frequent ones plus UNK.
    BuildVocab(BuildVocabArgs),
    /// Train an online variational LDA topic model.
    TrainLda(TrainLdaArgs),
    /// Train word, context, and topic embeddings.
    Train(TrainArgs),
    /// Word-similarity evaluation with Spearman correlation.
    EvalSim(EvalSimArgs),
    /// Word-analogy evaluation (exact match).
    EvalAnalogy(EvalAnalogyArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Raw UTF-8 corpus, one document per line.
    #[arg(long)]
    input: PathBuf,
    /// Output token file, one document per line.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Preprocessed token file.
    #[arg(long)]
    input: PathBuf,
    /// Vocabulary file: token<TAB>count, descending count, UNK last.
    #[arg(long)]
    output: PathBuf,
    /// Keep at most this many distinct tokens.
    #[arg(long, default_value_t = 200_000)]
    max_size: usize,
}

#[derive(Args)]
struct TrainLdaArgs {
    /// Preprocessed token file.
    #[arg(long)]
    input: PathBuf,
    /// Vocabulary file.
    #[arg(long)]
    vocab: PathBuf,
    /// Output topic model file.
    #[arg(long)]
    output: PathBuf,
    /// Number of topics T.
    #[arg(long, default_value_t = 50)]
    num_topics: usize,
    /// Passes over the corpus.
    #[arg(long, default_value_t = 1)]
    passes: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = 2048)]
    batch_size: usize,
    /// Document prior; defaults to 1/T.
    #[arg(long)]
    alpha: Option<f64>,
    /// Topic prior; defaults to 1/T.
    #[arg(long)]
    eta: Option<f64>,
    /// Learning-rate decay offset.
    #[arg(long, default_value_t = 1.0)]
    tau0: f64,
    /// Learning-rate decay exponent.
    #[arg(long, default_value_t = 0.5)]
    kappa: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Preprocessed token file.
    #[arg(long)]
    input: PathBuf,
    /// Vocabulary file.
    #[arg(long)]
    vocab: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    output: PathBuf,
    /// skipgram, mswe1, or mswe2.
    #[arg(long, default_value = "skipgram")]
    variant: String,
    /// Topic model file; required for mswe1 and mswe2.
    #[arg(long)]
    topics: Option<PathBuf>,
    /// Vector dimensionality.
    #[arg(long, default_value_t = 300)]
    dim: usize,
    /// Context window size k.
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Negative samples K per pair.
    #[arg(long, default_value_t = 10)]
    negatives: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 0.01)]
    lr: f32,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Frequent-word subsampling threshold (off when absent).
    #[arg(long)]
    subsample: Option<f64>,
    /// Also write a word-vectors-only text file here.
    #[arg(long)]
    export_vectors: Option<PathBuf>,
    /// Test hook: force all mixture weights to zero.
    #[arg(long, hide = true)]
    zero_lambda: bool,
}

#[derive(Args)]
struct EvalSimArgs {
    /// Bundle directory produced by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Similarity dataset (plain tsv or SCWS layout).
    #[arg(long)]
    dataset: PathBuf,
    /// global, avg, or avgc.
    #[arg(long, default_value = "global")]
    metric: String,
    /// Context-fit likelihood: inverse (1/(1-cos)) or cosine.
    #[arg(long, default_value = "inverse")]
    delta: String,
    /// Optional machine-readable JSON summary.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalAnalogyArgs {
    /// Bundle directory produced by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Analogy question file (":"-prefixed category headers).
    #[arg(long)]
    dataset: PathBuf,
    /// Optional machine-readable JSON summary.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit 2 for precondition/usage problems, 1 for runtime failures.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_)
        | Error::MissingContexts
        | Error::MissingTopics
        | Error::MoreTopicsThanVocabulary { .. }
        | Error::VocabularyTopicMismatch { .. }
        | Error::InvalidProbability(_) => 2,
        _ => 1,
    }
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 0 for --help/--version and 2 for usage errors.
            e.exit()
        }
    };
    let result = match cli.command {
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::BuildVocab(args) => cmd_build_vocab(args),
        Command::TrainLda(args) => cmd_train_lda(args),
        Command::Train(args) => cmd_train(args),
        Command::EvalSim(args) => cmd_eval_sim(args),
        Command::EvalAnalogy(args) => cmd_eval_analogy(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let input = File::open(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let output = File::create(&args.output).map_err(|e| Error::io(&args.output, e))?;
    let mut w = BufWriter::new(output);
    let mut docs = 0u64;
    for line in BufReader::new(input).lines() {
        let line = line.map_err(|e| Error::io(&args.input, e))?;
        let tokens = preprocess_text(&line);
        writeln!(w, "{}", tokens.join(" ")).map_err(|e| Error::io(&args.output, e))?;
        docs += 1;
    }
    w.flush().map_err(|e| Error::io(&args.output, e))?;
    eprintln!("preprocessed {docs} documents -> {}", args.output.display());
    Ok(())
}

fn cmd_build_vocab(args: BuildVocabArgs) -> Result<()> {
    let docs = crate::corpus::read_token_file(&args.input)?;
    let vocab = Vocabulary::build(docs, args.max_size)?;
    vocab.save(&args.output)?;
    eprintln!(
        "vocabulary of {} tokens (incl. UNK) -> {}",
        vocab.size(),
        args.output.display()
    );
    Ok(())
}

fn cmd_train_lda(args: TrainLdaArgs) -> Result<()> {
    let vocab = Vocabulary::load(&args.vocab)?;
    let corpus = encode_token_file(&args.input, &vocab)?;
    let config = LdaConfig {
        topics: args.num_topics,
        alpha: args.alpha,
        eta: args.eta,
        tau0: args.tau0,
        kappa: args.kappa,
        batch_size: args.batch_size,
        passes: args.passes,
        seed: args.seed,
        threads: args.threads,
    };
    let model = train_online_lda(&corpus, vocab.size(), &config)?;
    model.save(&args.output)?;
    eprintln!(
        "topic model T={} V={} -> {}",
        model.topics(),
        model.vocab_size(),
        args.output.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let variant: Variant = args.variant.parse()?;
    if variant.uses_topics() && args.topics.is_none() {
        return Err(Error::InvalidConfig(format!(
            "variant {variant} requires --topics <path> (a trained topic model)"
        )));
    }
    let vocab = Vocabulary::load(&args.vocab)?;
    let corpus = encode_token_file(&args.input, &vocab)?;
    let topics: Option<TopicModel> = match &args.topics {
        Some(path) if variant.uses_topics() => Some(TopicModel::load(path)?),
        _ => None,
    };
    let config = TrainingConfig {
        dim: args.dim,
        window: args.window,
        negatives: args.negatives,
        lr0: args.lr,
        epochs: args.epochs,
        seed: args.seed,
        threads: args.threads,
        variant,
        subsample: args.subsample,
        zero_lambda: args.zero_lambda,
    };
    eprintln!(
        "training {} on {} documents ({} tokens), dim={} epochs={} threads={}",
        variant,
        corpus.doc_count(),
        corpus.total_tokens(),
        config.dim,
        config.epochs,
        config.threads
    );
    let (model, losses) = train_with_stats(&corpus, &vocab, topics.as_ref(), &config)?;
    for (i, loss) in losses.iter().enumerate() {
        eprintln!("epoch {} mean loss {loss:.6}", i + 1);
    }
    let bundle = ModelBundle {
        vocab,
        topics,
        model,
        config,
    };
    save_bundle(&bundle, &args.output)?;
    if let Some(path) = &args.export_vectors {
        bundle.model.export_word_vectors(&bundle.vocab, path)?;
    }
    eprintln!("bundle -> {}", args.output.display());
    Ok(())
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::CorruptBundle(format!("summary serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn cmd_eval_sim(args: EvalSimArgs) -> Result<()> {
    let metric: SimilarityMetric = args.metric.parse()?;
    let delta = match args.delta.as_str() {
        "inverse" => DeltaMode::InverseCosineDistance,
        "cosine" => DeltaMode::Cosine,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown delta mode: {other} (expected inverse or cosine)"
            )))
        }
    };
    let bundle = load_bundle(&args.model)?;
    let dataset = SimilarityDataset::load(&args.dataset)?;
    let report = run_similarity_eval(
        &bundle.model,
        bundle.topics.as_ref(),
        &bundle.vocab,
        &dataset,
        metric,
        delta,
    )?;
    println!("word1\tword2\thuman\tmodel\tzero_vector");
    for p in &report.pairs {
        println!(
            "{}\t{}\t{:.4}\t{:.6}\t{}",
            p.word1, p.word2, p.human_score, p.model_score, p.zero_vector
        );
    }
    println!(
        "dataset={} metric={} pairs={} rho_x100={:.2} zero_vector_pairs={}",
        report.dataset,
        report.metric,
        report.pair_count,
        report.rho_times_100,
        report.zero_vector_pairs
    );
    if let Some(path) = &args.out {
        write_json(&report, path)?;
    }
    Ok(())
}

fn cmd_eval_analogy(args: EvalAnalogyArgs) -> Result<()> {
    let bundle = load_bundle(&args.model)?;
    let dataset = AnalogyDataset::load(&args.dataset)?;
    let report = run_analogy_eval(&bundle.model, &bundle.vocab, &dataset)?;
    println!("category\tcorrect\ttotal\toov_gold\taccuracy_percent");
    for c in &report.categories {
        println!(
            "{}\t{}\t{}\t{}\t{:.2}",
            c.category, c.correct, c.total, c.oov_gold, c.accuracy_percent
        );
    }
    println!(
        "total={} correct={} oov_gold={} accuracy_percent={:.2}",
        report.total, report.correct, report.oov_gold, report.accuracy_percent
    );
    if let Some(path) = &args.out {
        write_json(&report, path)?;
    }
    Ok(())
}
