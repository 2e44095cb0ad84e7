//! Command-line entry point: preprocess / stats / train / cv / eval /
//! predict, driven by a flat config file plus flag overrides.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tweetnet_cli::config::{Precision, RunConfig};
use tweetnet::autodiff::Scalar;
use tweetnet::datasets::{self, Dataset, SchemaDescriptor};
use tweetnet::error::{Error, Result};
use tweetnet::model::{load_checkpoint, save_checkpoint, Model};
use tweetnet::textproc::{Preprocessor, RawTweet, Rule};
use tweetnet::autodiff::as_f64;
use tweetnet::training::{argmax, build_model, cross_validate, evaluate, train, ModelSpec};

#[derive(Parser)]
#[command(
    name = "tweetnet",
    about = "Tweet sentiment classification: semantic rules, char-level CNN features, Bi-LSTM"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Semantic rules on or off.
    #[arg(long, value_parser = parse_on_off_flag)]
    rules: Option<bool>,
    /// Word embedding source: glove200, word2vec300, or random.
    #[arg(long)]
    embeddings: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a corpus (optionally applying the semantic rules) and
    /// report per-rule fire counts.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Summary statistics of a corpus after preprocessing.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write report, checkpoint, and resolved config.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// k-fold cross-validation.
    Cv {
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on a labeled corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Classify one text or every line of a file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_on_off_flag(value: &str) -> std::result::Result<bool, String> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected on or off, got {other:?}")),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 0 success, 2 config error, 3 data error, 4 divergence.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) => 2,
        Error::Divergence { .. } => 4,
        _ => 3,
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Preprocess {
            input,
            output,
            common,
        } => {
            let cfg = load_config(&common, false)?;
            cmd_preprocess(&cfg, &input, &output)
        }
        Command::Stats { input, common } => {
            let cfg = load_config(&common, false)?;
            cmd_stats(&cfg, &input)
        }
        Command::Train { common } => {
            let cfg = load_config(&common, true)?;
            match cfg.precision {
                Precision::F64 => cmd_train::<f64>(&cfg),
                Precision::F32 => cmd_train::<f32>(&cfg),
            }
        }
        Command::Cv { k, common } => {
            let mut cfg = load_config(&common, true)?;
            if let Some(k) = k {
                cfg.folds = k;
            }
            match cfg.precision {
                Precision::F64 => cmd_cv::<f64>(&cfg),
                Precision::F32 => cmd_cv::<f32>(&cfg),
            }
        }
        Command::Eval {
            checkpoint,
            input,
            common,
        } => {
            let cfg = load_config(&common, false)?;
            match cfg.precision {
                Precision::F64 => cmd_eval::<f64>(&cfg, &checkpoint, &input),
                Precision::F32 => cmd_eval::<f32>(&cfg, &checkpoint, &input),
            }
        }
        Command::Predict {
            checkpoint,
            text,
            input,
            common,
        } => {
            let cfg = load_config(&common, false)?;
            match cfg.precision {
                Precision::F64 => cmd_predict::<f64>(&cfg, &checkpoint, text, input),
                Precision::F32 => cmd_predict::<f32>(&cfg, &checkpoint, text, input),
            }
        }
    }
}

fn load_config(common: &Common, needs_corpus: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(rules) = common.rules {
        cfg.model.apply_rules = rules;
    }
    if let Some(embeddings) = &common.embeddings {
        cfg.embeddings = embeddings.parse()?;
    }
    cfg.finalize(needs_corpus)?;
    Ok(cfg)
}

fn build_preprocessor(cfg: &RunConfig) -> Result<Preprocessor> {
    let read = |path: &Option<PathBuf>, builtin: &str| -> Result<String> {
        match path {
            Some(p) => Ok(std::fs::read_to_string(p)?),
            None => Ok(builtin.to_string()),
        }
    };
    let emoticons = read(&cfg.emoticons, tweetnet::textproc::BUILTIN_EMOTICONS)?;
    let negative = read(&cfg.negative_cues, tweetnet::textproc::BUILTIN_NEGATIVE_CUES)?;
    let stopwords = read(&cfg.stopword_list, tweetnet::textproc::BUILTIN_STOPWORDS)?;
    let mut preproc = Preprocessor::with_lists(&emoticons, &negative, &stopwords);
    preproc.set_remove_stopwords(cfg.model.remove_stopwords);
    Ok(preproc)
}

fn load_corpus(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Config("no corpus configured".into()))?;
    match &cfg.schema {
        Some(schema) => datasets::load_with_schema(path, &SchemaDescriptor::from_file(schema)?),
        None => datasets::load_tsv(path),
    }
}

// ---- preprocess ----

/// A row of the preprocessing dialect: label, text, and optionally the
/// rules already applied by an earlier pass.
struct PreprocessRow {
    label: String,
    text: String,
    prior_rules: Vec<Rule>,
}

fn read_preprocess_rows(path: &Path) -> Result<Vec<PreprocessRow>> {
    let display = path.display().to_string();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(Error::Parse {
                path: display,
                line: lineno + 1,
                message: format!("expected 2 or 3 columns, found {}", fields.len()),
            });
        }
        let prior_rules = fields
            .get(2)
            .map(|col| {
                col.split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse())
                    .collect::<Result<Vec<Rule>>>()
            })
            .transpose()
            .map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: e.to_string(),
            })?
            .unwrap_or_default();
        rows.push(PreprocessRow {
            label: fields[0].to_string(),
            text: fields[1].to_string(),
            prior_rules,
        });
    }
    Ok(rows)
}

fn cmd_preprocess(cfg: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let preproc = build_preprocessor(cfg)?;
    let rows = read_preprocess_rows(input)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(output)?);
    let mut rule_counts = [0usize; 5];
    let mut touched = 0usize;
    let mut dropped = 0usize;
    let mut written = 0usize;

    for row in rows {
        let raw = match RawTweet::new(row.text.clone(), None) {
            Ok(raw) => raw,
            Err(_) => {
                dropped += 1;
                continue;
            }
        };
        let processed = match preproc.preprocess(&raw, cfg.model.apply_rules) {
            Ok(p) => p,
            Err(Error::DegenerateTweet(_)) => {
                dropped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if !processed.applied_rules.is_empty() {
            touched += 1;
        }
        let mut rules = row.prior_rules;
        for rule in &processed.applied_rules {
            let slot = Rule::ALL.iter().position(|r| r == rule).unwrap();
            rule_counts[slot] += 1;
            if !rules.contains(rule) {
                rules.push(*rule);
            }
        }
        rules.sort();
        if rules.is_empty() {
            writeln!(out, "{}\t{}", row.label, processed.text)?;
        } else {
            let names: Vec<String> = rules.iter().map(Rule::to_string).collect();
            writeln!(out, "{}\t{}\t{}", row.label, processed.text, names.join(","))?;
        }
        written += 1;
    }
    out.flush()?;

    println!("written = {written}");
    println!("rules_applied_tweets = {touched}");
    for (rule, count) in Rule::ALL.iter().zip(rule_counts) {
        println!("{rule} = {count}");
    }
    if dropped > 0 {
        eprintln!("warning: dropped {dropped} tweets that were empty after preprocessing");
    }
    Ok(())
}

// ---- stats ----

fn cmd_stats(cfg: &RunConfig, input: &Path) -> Result<()> {
    let preproc = build_preprocessor(cfg)?;
    let dataset = match &cfg.schema {
        Some(schema) => datasets::load_with_schema(input, &SchemaDescriptor::from_file(schema)?),
        None => datasets::load_tsv(input),
    }?;
    let stats = datasets::compute_stats(&dataset, &preproc, cfg.model.apply_rules);
    println!("dataset = {}", dataset.name);
    println!("rules = {}", if cfg.model.apply_rules { "on" } else { "off" });
    println!("N = {}", stats.n);
    println!("c = {}", stats.classes);
    println!("l_w = {}", stats.max_sentence_len);
    println!("l_c = {}", stats.max_word_len);
    println!("|V_w| = {}", stats.word_alphabet);
    println!("|V_c| = {}", stats.char_alphabet);
    println!("dropped = {}", stats.dropped);
    Ok(())
}

// ---- train ----

fn resolve_splits(cfg: &RunConfig, corpus: Dataset) -> Result<(Dataset, Dataset)> {
    match &cfg.dev_corpus {
        Some(path) => {
            let dev = match &cfg.schema {
                Some(schema) => {
                    datasets::load_with_schema(path, &SchemaDescriptor::from_file(schema)?)?
                }
                None => datasets::load_tsv(path)?,
            };
            Ok((corpus, dev))
        }
        None => datasets::split_dev(&corpus, cfg.train.dev_fraction, cfg.train.seed),
    }
}

fn cmd_train<F: Scalar>(cfg: &RunConfig) -> Result<()> {
    let preproc = build_preprocessor(cfg)?;
    let corpus = load_corpus(cfg)?;
    let (train_set, dev_set) = resolve_splits(cfg, corpus)?;
    let spec = ModelSpec {
        config: cfg.model.clone(),
        min_count: cfg.min_count,
        vectors: cfg.vectors.as_deref(),
    };
    let mut model: Model<F> = build_model(&spec, &preproc, &train_set, cfg.train.seed)?;
    let mut report = train(&mut model, &preproc, &train_set, &dev_set, &cfg.train)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let checkpoint = cfg.out_dir.join("model.twnt");
    save_checkpoint(&model, &checkpoint)?;
    report.checkpoint_path = Some(checkpoint.clone());
    report.write_tsv(&cfg.out_dir.join("report.tsv"))?;
    std::fs::write(cfg.out_dir.join("resolved.config"), cfg.resolved_text())?;
    model.word_vocab.save(&cfg.out_dir.join("word.vocab"))?;
    model.char_vocab.save(&cfg.out_dir.join("char.vocab"))?;

    let summary = format!(
        "train_examples = {}\ndev_examples = {}\nepochs_run = {}\nbest_epoch = {}\nbest_dev_accuracy = {}\ncheckpoint = {}\n",
        train_set.len(),
        dev_set.len(),
        report.epochs.len(),
        report.best_epoch,
        report.best_dev_accuracy,
        checkpoint.display()
    );
    std::fs::write(cfg.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

// ---- cross-validation ----

fn cmd_cv<F: Scalar>(cfg: &RunConfig) -> Result<()> {
    let preproc = build_preprocessor(cfg)?;
    let corpus = load_corpus(cfg)?;
    let spec = ModelSpec {
        config: cfg.model.clone(),
        min_count: cfg.min_count,
        vectors: cfg.vectors.as_deref(),
    };
    let cv = cross_validate::<F>(&corpus, cfg.folds, &spec, &preproc, &cfg.train)?;

    let mut table = String::new();
    for (i, acc) in cv.fold_accuracies.iter().enumerate() {
        table.push_str(&format!("{}\t{acc}\n", i + 1));
    }
    print!("{table}");
    println!("mean = {}", cv.mean);
    println!("stdev = {}", cv.stdev);

    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("cv.tsv"), &table)?;
    std::fs::write(
        cfg.out_dir.join("cv_summary.txt"),
        format!("folds = {}\nmean = {}\nstdev = {}\n", cfg.folds, cv.mean, cv.stdev),
    )?;
    std::fs::write(cfg.out_dir.join("resolved.config"), cfg.resolved_text())?;
    Ok(())
}

// ---- eval ----

fn cmd_eval<F: Scalar>(cfg: &RunConfig, checkpoint: &Path, input: &Path) -> Result<()> {
    let model: Model<F> = load_checkpoint(checkpoint)?;
    let preproc = Preprocessor::from_sources(&model.lists, model.config.remove_stopwords);
    let dataset = match &cfg.schema {
        Some(schema) => datasets::load_with_schema(input, &SchemaDescriptor::from_file(schema)?),
        None => datasets::load_tsv(input),
    }?;
    let eval = evaluate(&model, &preproc, &dataset)?;
    println!("examples = {}", eval.total);
    println!("correct = {}", eval.correct);
    println!("accuracy = {}", eval.accuracy());
    println!("degenerate = {}", eval.degenerate);
    for (t, row) in eval.confusion.iter().enumerate() {
        for (p, count) in row.iter().enumerate() {
            println!("confusion[{t}][{p}] = {count}");
        }
    }
    Ok(())
}

// ---- predict ----

fn cmd_predict<F: Scalar>(
    _cfg: &RunConfig,
    checkpoint: &Path,
    text: Option<String>,
    input: Option<PathBuf>,
) -> Result<()> {
    let model: Model<F> = load_checkpoint(checkpoint)?;
    // the preprocessing pipeline recorded at training time wins
    let preproc = Preprocessor::from_sources(&model.lists, model.config.remove_stopwords);

    let inputs: Vec<String> = match (text, input) {
        (Some(t), None) => vec![t],
        (None, Some(path)) => BufReader::new(std::fs::File::open(&path)?)
            .lines()
            .collect::<std::io::Result<_>>()?,
        _ => {
            return Err(Error::Config(
                "predict needs exactly one of --text or --input".into(),
            ))
        }
    };

    let mut skipped = 0usize;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in inputs {
        if line.trim().is_empty() {
            skipped += 1;
            continue;
        }
        let raw = RawTweet::new(line.clone(), None)?;
        let sentence = match preproc
            .preprocess(&raw, model.config.apply_rules)
            .and_then(|p| preproc.tokenize(&p.text))
        {
            Ok(s) => s,
            Err(Error::DegenerateTweet(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let probs = model.predict(&sentence)?;
        let label = argmax(&probs);
        let p = as_f64(probs[label]);
        writeln!(out, "{label}\t{p}\t{line}")?;
    }
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} empty or degenerate inputs");
    }
    Ok(())
}
