//! `seqtrans` command line: embedding training, cross-lingual mapping,
//! tagger training/evaluation/inference, and the synthetic corpus
//! generator.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use seqtrans::config::RunConfig;
use seqtrans::corpus::{self, Sentence, SplitCorpus, TagSet, Task, Vocabulary};
use seqtrans::embeddings::{
    read_vec, train_skipgram, write_vec, EmbeddingTable, NgramConfig, SkipgramConfig,
};
use seqtrans::models::{
    self, build_mtl, build_single, build_transfer, load_model, render_report, save_model,
    TaggerModel, TrainData, TransferLang,
};
use seqtrans::synth::{generate, SynthSpec};
use seqtrans::vecmap::{map_tables, VecmapConfig};

#[derive(Parser)]
#[command(name = "seqtrans", version, about = "Neural sequence labeling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train subword skip-gram word embeddings and write a .vec file.
    TrainEmbeddings(TrainEmbeddingsArgs),
    /// Map two monolingual .vec files into a shared cross-lingual space.
    Vecmap(VecmapArgs),
    /// Train a tagger (single, multitask, or cross-lingual transfer).
    Train(Box<TrainArgs>),
    /// Evaluate a trained model on a tagged corpus.
    Eval(EvalArgs),
    /// Tag raw tokenized text with a trained model.
    Tag(TagArgs),
    /// Generate deterministic twin-language corpora.
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Args)]
struct TrainEmbeddingsArgs {
    /// Corpus files: raw text (one sentence per line) or tagged corpus
    /// files (tab-separated; detected automatically). Repeatable.
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f32,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    min_count: u32,
    #[arg(long, default_value_t = 3)]
    min_n: usize,
    #[arg(long, default_value_t = 6)]
    max_n: usize,
    #[arg(long, default_value_t = 2_000_000)]
    buckets: usize,
    /// Wrap words in angle-bracket boundary markers before n-gram
    /// extraction.
    #[arg(long, default_value_t = false)]
    boundary_markers: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VecmapArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    trg: PathBuf,
    #[arg(long)]
    out_src: PathBuf,
    #[arg(long)]
    out_trg: PathBuf,
    #[arg(long, default_value_t = 4000)]
    cutoff: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Stochastic dictionary induction (keep-probability 0.9).
    #[arg(long, default_value_t = false)]
    stochastic: bool,
    #[arg(long, default_value_t = 0.9)]
    keep_prob: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// single | mtl | transfer
    #[arg(long)]
    mode: String,
    /// One corpus to be split 8:1:1 (alternative to --train/--dev/--test).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Second language corpus (transfer mode).
    #[arg(long)]
    corpus2: Option<PathBuf>,
    #[arg(long)]
    train2: Option<PathBuf>,
    #[arg(long)]
    dev2: Option<PathBuf>,
    #[arg(long)]
    test2: Option<PathBuf>,
    /// Pre-trained .vec embeddings for the (first) language.
    #[arg(long)]
    embeddings: PathBuf,
    /// Embeddings for the second language (transfer mode).
    #[arg(long)]
    embeddings2: Option<PathBuf>,
    /// Head key of the first language in transfer mode.
    #[arg(long, default_value = "l1")]
    lang: String,
    /// Head key of the second language in transfer mode.
    #[arg(long, default_value = "l2")]
    lang2: String,
    /// Plain-text config file (`key = value`, `#` comments).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config overrides, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lstm_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_report: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Head to evaluate (required for transfer models).
    #[arg(long)]
    head: Option<String>,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    /// Raw text: one sentence per line, space-separated tokens.
    #[arg(long)]
    input: PathBuf,
    /// Head to decode with (required for transfer models).
    #[arg(long)]
    head: Option<String>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenSyntheticArgs {
    #[arg(long)]
    out_a: PathBuf,
    #[arg(long)]
    out_b: PathBuf,
    #[arg(long, default_value_t = 120)]
    vocab_size: usize,
    #[arg(long, default_value_t = 6)]
    tags: usize,
    #[arg(long, default_value_t = 0.8)]
    overlap: f64,
    #[arg(long, default_value_t = 1.0)]
    determinism: f64,
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long, default_value_t = 500)]
    sentences: usize,
    /// Emit gender and number columns in addition to POS.
    #[arg(long, default_value_t = false)]
    aux_tasks: bool,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    env_logger::init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::TrainEmbeddings(a) => cmd_train_embeddings(a),
        Command::Vecmap(a) => cmd_vecmap(a),
        Command::Train(a) => cmd_train(*a),
        Command::Eval(a) => cmd_eval(a),
        Command::Tag(a) => cmd_tag(a),
        Command::GenSynthetic(a) => cmd_gen_synthetic(a),
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("SEQTRANS_SEED").ok().and_then(|s| s.parse().ok())
}

/// Reads sentences for embedding training. Files containing tabs are
/// treated as tagged corpora (first column = token, blank line = sentence
/// boundary); anything else is raw text, one sentence per line.
fn read_token_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read corpus '{}'", path.display()))?;
    let mut sentences = Vec::new();
    if text.contains('\t') {
        let mut current = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                if !current.is_empty() {
                    sentences.push(std::mem::take(&mut current));
                }
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let token = line.split('\t').next().unwrap_or_default();
            if !token.is_empty() {
                current.push(token.to_string());
            }
        }
        if !current.is_empty() {
            sentences.push(current);
        }
    } else {
        for line in text.lines() {
            let tokens: Vec<String> = line.split_whitespace().map(String::from).collect();
            if !tokens.is_empty() {
                sentences.push(tokens);
            }
        }
    }
    Ok(sentences)
}

fn cmd_train_embeddings(a: TrainEmbeddingsArgs) -> Result<()> {
    let mut sentences = Vec::new();
    for path in &a.corpus {
        sentences.extend(read_token_sentences(path)?);
    }
    if sentences.is_empty() {
        bail!("no sentences found in the corpus files");
    }
    let seed = a.seed.or_else(env_seed).unwrap_or(42);
    let cfg = SkipgramConfig {
        window: a.window,
        negatives: a.negatives,
        learning_rate: a.lr,
        epochs: a.epochs,
        min_count: a.min_count,
        seed,
    };
    let ncfg = NgramConfig {
        min_n: a.min_n,
        max_n: a.max_n,
        bucket_count: a.buckets,
        boundary_markers: a.boundary_markers,
    };
    println!(
        "dim = {}, window = {}, negatives = {}, lr = {}, epochs = {}, min_count = {}, \
         min_n = {}, max_n = {}, buckets = {}, boundary_markers = {}, seed = {seed}",
        a.dim, a.window, a.negatives, a.lr, a.epochs, a.min_count, a.min_n, a.max_n,
        a.buckets, a.boundary_markers
    );
    let (table, stats) = train_skipgram(&sentences, &cfg, &ncfg, a.dim)?;
    for (i, loss) in stats.epoch_loss.iter().enumerate() {
        println!("epoch {}\tavg_loss {loss:.6}", i + 1);
    }
    // Fold subword rows into the exported word vectors.
    let out = fs::File::create(&a.out)
        .with_context(|| format!("cannot create '{}'", a.out.display()))?;
    write_vec(&table.compose_words(), std::io::BufWriter::new(out))?;
    println!("wrote {} vectors to {}", table.len(), a.out.display());
    Ok(())
}

fn load_vec(path: &Path) -> Result<EmbeddingTable> {
    let file = fs::File::open(path)
        .with_context(|| format!("cannot open embeddings '{}'", path.display()))?;
    read_vec(std::io::BufReader::new(file))
        .with_context(|| format!("bad vector file '{}'", path.display()))
}

fn cmd_vecmap(a: VecmapArgs) -> Result<()> {
    let src = load_vec(&a.src)?;
    let trg = load_vec(&a.trg)?;
    let cfg = VecmapConfig {
        cutoff: a.cutoff,
        tol: a.tol,
        patience: a.patience,
        max_iters: a.max_iters,
        stochastic: a.stochastic,
        keep_prob: a.keep_prob,
        seed: a.seed.or_else(env_seed).unwrap_or(42),
    };
    println!(
        "cutoff = {}, tol = {}, patience = {}, max_iters = {}, stochastic = {}, seed = {}",
        cfg.cutoff, cfg.tol, cfg.patience, cfg.max_iters, cfg.stochastic, cfg.seed
    );
    let (mapped_src, mapped_trg) = map_tables(&src, &trg, &cfg)?;
    write_vec(
        &mapped_src,
        std::io::BufWriter::new(fs::File::create(&a.out_src)?),
    )?;
    write_vec(
        &mapped_trg,
        std::io::BufWriter::new(fs::File::create(&a.out_trg)?),
    )?;
    println!(
        "mapped {} + {} vectors into a shared space",
        mapped_src.len(),
        mapped_trg.len()
    );
    Ok(())
}

fn tasks_for_mode(mode: &str) -> Result<Vec<Task>> {
    match mode {
        "single" | "transfer" => Ok(vec![Task::Pos]),
        "mtl" => Ok(vec![Task::Pos, Task::Gender, Task::Number]),
        other => bail!("unknown mode '{other}' (expected single, mtl, or transfer)"),
    }
}

struct LoadedCorpus {
    split: SplitCorpus,
    tagsets: BTreeMap<Task, TagSet>,
    vocab: Vocabulary,
}

fn load_split(
    corpus: &Option<PathBuf>,
    train: &Option<PathBuf>,
    dev: &Option<PathBuf>,
    test: &Option<PathBuf>,
    tasks: &[Task],
    seed: u64,
) -> Result<LoadedCorpus> {
    let read = |p: &PathBuf| -> Result<String> {
        fs::read_to_string(p).with_context(|| format!("cannot read corpus '{}'", p.display()))
    };
    let (split, tagsets) = match (corpus, train, dev, test) {
        (Some(c), None, None, None) => {
            let parsed = corpus::parse_corpus(&read(c)?, tasks)?;
            (corpus::split_8_1_1(parsed.sentences, seed)?, parsed.tagsets)
        }
        (None, Some(tr), Some(dv), Some(te)) => {
            // Externally provided splits share one tag inventory built over
            // all three files.
            let mut tagsets: BTreeMap<Task, TagSet> =
                tasks.iter().map(|&t| (t, TagSet::new(t))).collect();
            let train = corpus::parse_corpus_into(&read(tr)?, tasks, &mut tagsets)?;
            let dev = corpus::parse_corpus_into(&read(dv)?, tasks, &mut tagsets)?;
            let test = corpus::parse_corpus_into(&read(te)?, tasks, &mut tagsets)?;
            (SplitCorpus { train, dev, test, seed }, tagsets)
        }
        _ => bail!("provide either --corpus or all of --train/--dev/--test"),
    };
    let all: Vec<Sentence> = split
        .train
        .iter()
        .chain(&split.dev)
        .chain(&split.test)
        .cloned()
        .collect();
    Ok(LoadedCorpus {
        vocab: Vocabulary::from_sentences(&all),
        split,
        tagsets,
    })
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let tasks = tasks_for_mode(&a.mode)?;

    // Resolve config: file values, then --set overrides, then flags.
    let mut cfg = match &a.config {
        Some(path) => RunConfig::from_text(
            &fs::read_to_string(path)
                .with_context(|| format!("cannot read config '{}'", path.display()))?,
        )?,
        None => RunConfig::default(),
    };
    let mut overrides: BTreeMap<String, String> = BTreeMap::new();
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects key=value, got '{kv}'"))?;
        overrides.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(v) = a.dropout {
        overrides.insert("dropout".into(), v.to_string());
    }
    if let Some(v) = a.lstm_size {
        overrides.insert("lstm_size".into(), v.to_string());
    }
    if let Some(v) = a.epochs {
        overrides.insert("epochs".into(), v.to_string());
    }
    if let Some(v) = a.patience {
        overrides.insert("patience".into(), v.to_string());
    }
    if let Some(v) = a.batch_size {
        overrides.insert("batch_size".into(), v.to_string());
    }
    if let Some(v) = &a.optimizer {
        overrides.insert("optimizer".into(), v.clone());
    }
    if let Some(v) = a.lr {
        overrides.insert("lr".into(), v.to_string());
    }
    if let Some(v) = a.seed {
        overrides.insert("seed".into(), v.to_string());
    }
    cfg.apply_overrides(&overrides)?;

    // Echo the fully resolved configuration before doing any work.
    let mut header = cfg.echo();
    header.push(("mode".to_string(), a.mode.clone()));
    for (k, v) in &header {
        println!("{k} = {v}");
    }

    let seed = cfg.resolved_seed();
    let tagger_cfg = cfg.tagger_config();
    let train_cfg = cfg.train_config();

    let first = load_split(&a.corpus, &a.train, &a.dev, &a.test, &tasks, seed)?;
    let table = load_vec(&a.embeddings)?;

    let (model, report) = match a.mode.as_str() {
        "single" => {
            let mut model = build_single(
                &tagger_cfg,
                &first.vocab,
                &first.tagsets[&Task::Pos],
                &table,
            )?;
            let report = models::train(&mut model, &TrainData::Mono(&first.split), &train_cfg)?;
            (model, report)
        }
        "mtl" => {
            let mut model = build_mtl(&tagger_cfg, &first.vocab, &first.tagsets, &table)?;
            let report = models::train(&mut model, &TrainData::Mono(&first.split), &train_cfg)?;
            (model, report)
        }
        "transfer" => {
            let second = load_split(&a.corpus2, &a.train2, &a.dev2, &a.test2, &tasks, seed)?;
            let table2 = load_vec(
                a.embeddings2
                    .as_ref()
                    .ok_or_else(|| anyhow!("transfer mode needs --embeddings2"))?,
            )?;
            let mut model = build_transfer(
                &tagger_cfg,
                [
                    TransferLang {
                        key: &a.lang,
                        vocab: &first.vocab,
                        tagset: &first.tagsets[&Task::Pos],
                        word_table: &table,
                    },
                    TransferLang {
                        key: &a.lang2,
                        vocab: &second.vocab,
                        tagset: &second.tagsets[&Task::Pos],
                        word_table: &table2,
                    },
                ],
            )?;
            let report = models::train(
                &mut model,
                &TrainData::Bilingual(&first.split, &second.split),
                &train_cfg,
            )?;
            (model, report)
        }
        _ => unreachable!("mode validated above"),
    };

    let rendered = render_report(&report, &header);
    fs::write(&a.out_report, &rendered)
        .with_context(|| format!("cannot write report '{}'", a.out_report.display()))?;
    save_model(&model, &a.out_model)?;

    println!(
        "stopped at epoch {}, best epoch {} (dev {:.4})",
        report.stopped_at, report.best_epoch, report.best_dev
    );
    for (head, acc) in &report.test_acc {
        println!("test accuracy [{head}] = {acc:.4}");
    }
    println!("model: {}", a.out_model.display());
    println!("report: {}", a.out_report.display());
    Ok(())
}

/// Re-encodes parsed tag names into the model head's tag inventory,
/// erroring on names the model has never seen.
fn align_tags(
    sentences: &mut [Sentence],
    parsed: &BTreeMap<Task, TagSet>,
    model_tagset: &TagSet,
    task: Task,
) -> Result<()> {
    let mut unknown: Vec<String> = Vec::new();
    for s in sentences.iter_mut() {
        if let Some(ids) = s.tags.get_mut(&task) {
            for id in ids.iter_mut() {
                let name = parsed[&task].name(*id);
                match model_tagset.id(name) {
                    Some(mapped) => *id = mapped,
                    None => {
                        if !unknown.contains(&name.to_string()) {
                            unknown.push(name.to_string());
                        }
                    }
                }
            }
        }
    }
    if !unknown.is_empty() {
        bail!("corpus contains tags unknown to the model: {}", unknown.join(", "));
    }
    Ok(())
}

fn pick_heads(model: &TaggerModel, head: &Option<String>) -> Result<Vec<usize>> {
    match head {
        Some(key) => {
            let idx = model
                .head_index(key)
                .ok_or_else(|| anyhow!("model has no head '{key}'"))?;
            Ok(vec![idx])
        }
        None => {
            if model.mode == models::ModelMode::Transfer {
                bail!("transfer models need --head to pick a language");
            }
            Ok((0..model.heads.len()).collect())
        }
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let heads = pick_heads(&model, &a.head)?;
    let tasks: Vec<Task> = heads.iter().map(|&h| model.heads[h].task).collect();
    let text = fs::read_to_string(&a.corpus)
        .with_context(|| format!("cannot read corpus '{}'", a.corpus.display()))?;
    let parsed = corpus::parse_corpus(&text, &tasks)?;
    if parsed.sentences.is_empty() {
        bail!("corpus '{}' contains no sentences", a.corpus.display());
    }
    let mut sentences = parsed.sentences;
    for &h in &heads {
        let head = &model.heads[h];
        align_tags(&mut sentences, &parsed.tagsets, &head.tagset, head.task)?;
        let metrics = models::evaluate(&model, h, &sentences)?;
        println!(
            "accuracy [{}] = {:.6} ({} / {} tokens)",
            head.key,
            metrics.value(),
            metrics.correct,
            metrics.total
        );
    }
    Ok(())
}

fn cmd_tag(a: TagArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let heads = pick_heads(&model, &a.head)?;
    let text = fs::read_to_string(&a.input)
        .with_context(|| format!("cannot read input '{}'", a.input.display()))?;

    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<String> = line.split_whitespace().map(String::from).collect();
        if tokens.is_empty() {
            eprintln!("warning: skipping empty line {}", i + 1);
            continue;
        }
        let sentence = Sentence { tokens, tags: BTreeMap::new() };
        let mut columns: Vec<Vec<String>> = Vec::new();
        for &h in &heads {
            let head = &model.heads[h];
            let tags = model.predict(h, &sentence);
            columns.push(tags.iter().map(|&t| head.tagset.name(t).to_string()).collect());
        }
        for (t, tok) in sentence.tokens.iter().enumerate() {
            out.push_str(tok);
            for col in &columns {
                out.push('\t');
                out.push_str(&col[t]);
            }
            out.push('\n');
        }
        out.push('\n');
    }
    match &a.out {
        Some(path) => fs::write(path, out)
            .with_context(|| format!("cannot write output '{}'", path.display()))?,
        None => {
            std::io::stdout().write_all(out.as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_gen_synthetic(a: GenSyntheticArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.overlap) {
        bail!("--overlap must be in [0, 1]");
    }
    if !(0.0..=1.0).contains(&a.determinism) {
        bail!("--determinism must be in [0, 1]");
    }
    let spec = SynthSpec {
        vocab_size: a.vocab_size,
        tag_count: a.tags,
        overlap: a.overlap,
        determinism: a.determinism,
        min_len: a.min_len,
        max_len: a.max_len,
        sentences: a.sentences,
        seed: a.seed.or_else(env_seed).unwrap_or(42),
        aux_tasks: a.aux_tasks,
    };
    let data = generate(&spec);
    fs::write(&a.out_a, corpus::write_corpus(&data.lang_a, &data.tagsets))?;
    fs::write(&a.out_b, corpus::write_corpus(&data.lang_b, &data.tagsets))?;
    println!(
        "wrote {} sentences per language to {} and {}",
        spec.sentences,
        a.out_a.display(),
        a.out_b.display()
    );
    Ok(())
}
