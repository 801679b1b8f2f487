//! The `fewfit` command line. [`run_cli`] parses arguments, runs one
//! subcommand, and maps the outcome to a process exit code.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fewfit_core::benchmark::bench_synth;
use fewfit_core::data_io::{multi_seed_eval, sample_kshot, save_jsonl};
use fewfit_core::encoder::EncoderConfig;
use fewfit_core::selfcheck::pipeline_grad_check;
use fewfit_core::synth::{generate_synthetic, SynthSpec};
use fewfit_core::tokenizer::TokenizerConfig;
use fewfit_core::trainer::train_with;
use fewfit_core::{
    evaluate, load_dataset, load_model, model_class_index, predict, save_model, ColumnMap, DataFormat, Dataset, SimRep,
    TrainConfig,
};
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fewfit", version, about = "Few-shot many-class text classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write it to a model file.
    Train(TrainCmd),
    /// Classify texts with a trained model; writes JSON lines.
    Predict(PredictCmd),
    /// Accuracy of a trained model on a labeled file.
    Evaluate(EvaluateCmd),
    /// Sample k examples per class from a labeled file.
    Kshot(KshotCmd),
    /// k-shot sampling, training and evaluation repeated over seeds.
    MultiSeed(MultiSeedCmd),
    /// Train and evaluate on generated many-class data; prints a timing and accuracy report.
    BenchSynth(BenchSynthCmd),
    /// Finite-difference check of the full training objective's gradients.
    Gradcheck(GradcheckCmd),
    /// Write a generated train/test pair as JSON lines.
    Synth(SynthCmd),
}

/// Input format and column mapping.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input format; inferred from the file extension when omitted.
    #[arg(long, value_parser = clap::value_parser!(DataFormat))]
    pub format: Option<DataFormat>,
    /// Field or column holding the text.
    #[arg(long, default_value = "text")]
    pub text_column: String,
    /// Field or column holding the label.
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// JSON object mapping labels to the class names used during training
    /// and inference; labels not listed use the label string itself.
    #[arg(long)]
    pub class_names: Option<PathBuf>,
}

impl DataArgs {
    fn columns(&self) -> ColumnMap {
        ColumnMap {
            text: self.text_column.clone(),
            label: self.label_column.clone(),
        }
    }

    pub fn load(&self, path: &Path) -> anyhow::Result<Dataset> {
        let format = self.format.unwrap_or_else(|| DataFormat::from_path(path));
        let data = load_dataset(path, format, &self.columns())?;
        match &self.class_names {
            None => Ok(data),
            Some(p) => {
                let raw = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let names: BTreeMap<String, String> =
                    serde_json::from_str(&raw).with_context(|| format!("parsing class names in {}", p.display()))?;
                Ok(data.with_class_names(names))
            }
        }
    }
}

/// Training hyperparameters; defaults match [`TrainConfig::default`].
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Similarity used in the loss and at inference.
    #[arg(long, default_value = "token", value_parser = clap::value_parser!(SimRep))]
    pub sim_rep: SimRep,
    /// Dropout-masked copies of every batch row.
    #[arg(long, default_value_t = 4)]
    pub num_repeats: usize,
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    /// Texts per batch, before class-name injection and repeats.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    /// Embedding width.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// MLP hidden width; twice the embedding width when omitted.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    /// Tokens kept per text.
    #[arg(long, default_value_t = 32)]
    pub max_length: usize,
    /// Hashing vocabulary size.
    #[arg(long, default_value_t = 65_536)]
    pub vocab_size: usize,
    /// Add the single-head self-attention block.
    #[arg(long)]
    pub attention: bool,
}

impl TrainArgs {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            num_repeats: self.num_repeats,
            lr: self.lr,
            weight_decay: self.weight_decay,
            temperature: self.temperature,
            metric: self.sim_rep,
            seed,
            tokenizer: TokenizerConfig {
                vocab_size: self.vocab_size,
                max_len: self.max_length,
                ..TokenizerConfig::default()
            },
            encoder: EncoderConfig {
                d: self.dim,
                h: self.hidden.unwrap_or(2 * self.dim),
                dropout_rate: self.dropout,
                use_attention: self.attention,
                init_seed: seed,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(long)]
    pub train_file: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub model_out: PathBuf,
    /// Per-epoch JSON lines: {"epoch", "mean_loss", "seconds"}.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictCmd {
    #[arg(long)]
    pub model_in: PathBuf,
    /// Texts to classify: JSON lines (`.jsonl`) with a text field, otherwise
    /// one text per line; `-` reads stdin.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "text")]
    pub text_column: String,
    #[arg(long, default_value_t = 1)]
    pub top_k: usize,
    /// Defaults to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateCmd {
    #[arg(long)]
    pub model_in: PathBuf,
    #[arg(long)]
    pub test_file: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct KshotCmd {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep classes with fewer than k examples instead of failing.
    #[arg(long)]
    pub allow_fewer: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MultiSeedCmd {
    /// Pool the k-shot splits are drawn from.
    #[arg(long)]
    pub train_file: PathBuf,
    #[arg(long)]
    pub test_file: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Run seeds one after another instead of in parallel.
    #[arg(long)]
    pub sequential: bool,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Easy,
    Hard,
}

/// Generator settings; unset flags come from the preset.
#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "easy")]
    pub preset: Preset,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub signature_tokens: Option<usize>,
    #[arg(long)]
    pub noise_vocab: Option<usize>,
    #[arg(long)]
    pub tokens_per_text: Option<usize>,
    #[arg(long)]
    pub signature_fraction: Option<f64>,
    #[arg(long)]
    pub overlap_prob: Option<f64>,
    #[arg(long)]
    pub k_train: Option<usize>,
    #[arg(long)]
    pub k_test: Option<usize>,
}

impl SynthArgs {
    pub fn to_spec(&self, seed: u64) -> SynthSpec {
        let base = match self.preset {
            Preset::Easy => SynthSpec::easy(),
            Preset::Hard => SynthSpec::hard(),
        };
        SynthSpec {
            num_classes: self.num_classes.unwrap_or(base.num_classes),
            signature_tokens_per_class: self.signature_tokens.unwrap_or(base.signature_tokens_per_class),
            shared_noise_vocab: self.noise_vocab.unwrap_or(base.shared_noise_vocab),
            tokens_per_text: self.tokens_per_text.unwrap_or(base.tokens_per_text),
            signature_fraction: self.signature_fraction.unwrap_or(base.signature_fraction),
            overlap_prob: self.overlap_prob.unwrap_or(base.overlap_prob),
            k_train: self.k_train.unwrap_or(base.k_train),
            k_test: self.k_test.unwrap_or(base.k_test),
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchSynthCmd {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Each seed drives data generation and training.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckCmd {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print every trial, not just the summary.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

/// Parses `argv` (program name first) and runs it, writing normal output to
/// `out` and diagnostics to `err`. Returns the exit code.
pub fn run_cli_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return if code == EXIT_OK { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match run(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", error_chain(&e));
            EXIT_RUNTIME
        }
    }
}

/// Joins an error and its causes, skipping causes already spelled out by
/// the message above them.
fn error_chain(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

/// [`run_cli_with`] on the process's stdout and stderr.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_cli_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(command: Command, out: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        Command::Train(c) => cmd_train(c, out),
        Command::Predict(c) => cmd_predict(c, out),
        Command::Evaluate(c) => {
            let model = load_model(&c.model_in)?;
            let index = model_class_index(&model)?;
            let test = c.data.load(&c.test_file)?;
            let eval = evaluate(&model, &index, &test)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&eval)?)?;
            Ok(())
        }
        Command::Kshot(c) => {
            let data = c.data.load(&c.input)?;
            let split = sample_kshot(&data, c.k, c.seed, c.allow_fewer)?;
            save_jsonl(&split, &c.out)?;
            writeln!(out, "wrote {} examples ({} classes) to {}", split.len(), split.classes().len(), c.out.display())?;
            Ok(())
        }
        Command::MultiSeed(c) => {
            let pool = c.data.load(&c.train_file)?;
            let test = c.data.load(&c.test_file)?;
            let report = multi_seed_eval(&pool, &test, c.k, &c.seeds, &c.train.to_config(0), !c.sequential)?;
            writeln!(out, "{report}")?;
            if let Some(p) = &c.report_out {
                write_json(p, &report)?;
            }
            if report.failed() == report.per_seed.len() {
                bail!("every seed failed");
            }
            Ok(())
        }
        Command::BenchSynth(c) => {
            let report = bench_synth(&c.synth.to_spec(0), &c.train.to_config(0), &c.seeds)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            if let Some(p) = &c.report_out {
                write_json(p, &report)?;
            }
            Ok(())
        }
        Command::Gradcheck(c) => {
            let report = pipeline_grad_check(c.trials, c.seed)?;
            if c.verbose {
                for t in &report.trials {
                    writeln!(out, "{}", serde_json::to_string(t)?)?;
                }
            }
            writeln!(
                out,
                "{} trials, max relative error {:.3e} (tolerance {:.0e}), {:.2}s",
                report.trials.len(),
                report.max_rel_error,
                report.tolerance,
                report.seconds
            )?;
            if !report.passed() {
                bail!("gradient check failed: {:.3e} >= {:.0e}", report.max_rel_error, report.tolerance);
            }
            Ok(())
        }
        Command::Synth(c) => {
            let (train, test) = generate_synthetic(&c.synth.to_spec(c.seed))?;
            save_jsonl(&train, &c.train_out)?;
            save_jsonl(&test, &c.test_out)?;
            writeln!(out, "wrote {} train and {} test examples", train.len(), test.len())?;
            Ok(())
        }
    }
}

fn cmd_train(c: TrainCmd, out: &mut dyn Write) -> anyhow::Result<()> {
    let data = c.data.load(&c.train_file)?;
    let config = c.train.to_config(c.seed);
    let mut metrics = c.metrics_out.as_deref().map(create).transpose()?;
    let mut io_err: Option<io::Error> = None;
    let model = train_with(&config, &data, |s| {
        let line = json!({ "epoch": s.epoch, "mean_loss": s.mean_loss, "seconds": s.seconds });
        let res = writeln!(out, "epoch {:>3}  mean_loss {:.6}  seconds {:.2}", s.epoch, s.mean_loss, s.seconds)
            .and_then(|_| match metrics.as_mut() {
                Some(m) => writeln!(m, "{line}").and_then(|_| m.flush()),
                None => Ok(()),
            });
        if let Err(e) = res {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e).context("writing training metrics");
    }
    save_model(&model, &c.model_out)?;
    writeln!(out, "saved model ({} classes) to {}", model.classes.len(), c.model_out.display())?;
    Ok(())
}

fn read_texts(path: &Path, text_column: &str) -> anyhow::Result<Vec<String>> {
    let reader: Box<dyn BufRead> = if path == Path::new("-") {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(File::open(path).with_context(|| format!("io error: cannot open {}", path.display()))?))
    };
    let jsonl = path.extension().is_some_and(|e| e == "jsonl" || e == "json");
    let mut texts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if jsonl {
            let v: serde_json::Value = serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?;
            match v.get(text_column).and_then(|t| t.as_str()) {
                Some(t) => texts.push(t.to_string()),
                None => bail!("line {}: missing string field {text_column:?}", i + 1),
            }
        } else {
            texts.push(line);
        }
    }
    Ok(texts)
}

fn cmd_predict(c: PredictCmd, out: &mut dyn Write) -> anyhow::Result<()> {
    let model = load_model(&c.model_in)?;
    let index = model_class_index(&model)?;
    let texts = read_texts(&c.input, &c.text_column)?;
    let mut file = c.output.as_deref().map(create).transpose()?;
    let sink: &mut dyn Write = match file.as_mut() {
        Some(f) => f,
        None => out,
    };
    for text in &texts {
        let p = predict(&model, &index, text, c.top_k)?;
        let line = json!({ "text": text, "label": p.label, "score": p.score, "topk": p.ranking });
        writeln!(sink, "{line}")?;
    }
    sink.flush()?;
    Ok(())
}
