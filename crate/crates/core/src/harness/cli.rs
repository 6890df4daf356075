use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::exit_policy::{Criterion, ExitPolicy, Window, DEFAULT_RANGE_EPS};
use crate::scheduler::{
    compare_strategies, compute_ratio, run_algorithm1, write_comparison_csv, write_samples_csv, write_steps_csv,
    CostModel, ModelEngine, SpeedupBreakdown, Strategy,
};
use crate::training::{train_with_callback, Example};

use super::{
    attention, default_grid, encode_records, load_dataset, preprocess::DEFAULT_STOPWORDS, save_dataset, split_dataset,
    sweep_delta, synth_dataset, Checkpoint, LabeledText, Preprocessor, RunConfig, SynthSpec, Vocabulary,
};

#[derive(Debug, Parser)]
#[command(name = "elbert", version, about = "Adaptive-depth text classification with early exit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a run config and a label<TAB>text dataset.
    Train(TrainArgs),
    /// Accuracy and compute ratio of a checkpoint under an exit policy.
    Eval(EvalArgs),
    /// Sweep the entropy threshold and write one CSV row per value.
    Sweep(SweepArgs),
    /// Compare execution strategies under the latency cost model.
    ScheduleSim(ScheduleArgs),
    /// Cumulative [CLS] attention per layer for one text.
    TraceAttention(TraceArgs),
    /// Clean the texts of a dataset file.
    Preprocess(PreprocessArgs),
    /// Generate a synthetic keyword dataset.
    Synth(SynthArgs),
}

/// Exit policy flags. Without any of them inference runs at full depth.
/// `--delta` alone enables only the entropy threshold; any of the window
/// flags also enables the window test.
#[derive(Debug, Clone, Args)]
pub struct PolicyArgs {
    #[arg(long)]
    pub delta: Option<f64>,
    /// Window size, or `inf` to disable the window test.
    #[arg(long)]
    pub window: Option<Window>,
    #[arg(long)]
    pub criterion: Option<Criterion>,
    #[arg(long)]
    pub range_eps: Option<f64>,
}

impl PolicyArgs {
    fn wants_window(&self) -> bool {
        self.window.is_some() || self.criterion.is_some() || self.range_eps.is_some()
    }

    fn with_delta(&self, delta: f64) -> Result<ExitPolicy> {
        if !self.wants_window() {
            return ExitPolicy::threshold_only(delta);
        }
        let p = ExitPolicy {
            delta,
            window: self.window.unwrap_or_default(),
            criterion: self.criterion.unwrap_or_default(),
            range_eps: self.range_eps.unwrap_or(DEFAULT_RANGE_EPS),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn build(&self) -> Result<Option<ExitPolicy>> {
        if self.delta.is_none() && !self.wants_window() {
            return Ok(None);
        }
        self.with_delta(self.delta.unwrap_or(0.0)).map(Some)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run only the first k encoder iterations.
    #[arg(long)]
    pub depth_override: Option<usize>,
}

impl ModelArgs {
    fn load(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::load(&self.checkpoint)?;
        if let Some(k) = self.depth_override {
            ck.model = ck.model.with_depth(k)?;
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Per-epoch CSV: epoch,train_loss,val_accuracy.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value_t = 8)]
    pub batch_slots: usize,
    /// Per-sample CSV.
    #[arg(long)]
    pub samples_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated thresholds; default 0.1,0.2,…,1.0.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value_t = 8)]
    pub batch_slots: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Only report this strategy (Case 1 still runs as the baseline).
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value_t = 32)]
    pub batch_slots: usize,
    #[arg(long)]
    pub step_fixed: Option<f64>,
    #[arg(long)]
    pub step_per_slot: Option<f64>,
    #[arg(long)]
    pub embed_cost: Option<f64>,
    #[arg(long)]
    pub classifier_cost: Option<f64>,
    /// Per-step occupancy CSV for every strategy.
    #[arg(long)]
    pub steps_out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub text: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Comma-separated stopwords replacing the default list.
    #[arg(long, value_delimiter = ',')]
    pub stopwords: Option<Vec<String>>,
    /// Comma-separated tokens to drop as non-financial content.
    #[arg(long, value_delimiter = ',')]
    pub filtered: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = SynthSpec::default().keywords_per_class)]
    pub keywords_per_class: usize,
    #[arg(long, default_value_t = SynthSpec::default().noise_words)]
    pub noise_words: usize,
    #[arg(long, default_value_t = SynthSpec::default().min_noise)]
    pub min_noise: usize,
    #[arg(long, default_value_t = SynthSpec::default().max_noise)]
    pub max_noise: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn load_examples(ck: &Checkpoint, data: &Path) -> Result<Vec<Example>> {
    let records = load_dataset(data, ck.model.config().classes)?;
    let (examples, _) = ck.examples(&records);
    if examples.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no usable records", data.display())));
    }
    Ok(examples)
}

fn split_examples(examples: &[Example]) -> (Vec<crate::model::TokenSequence>, Vec<usize>) {
    examples.iter().map(|e| (e.tokens.clone(), e.label)).unzip()
}

fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let records = load_dataset(&args.data, cfg.model.classes)?;
    let preprocessor = cfg.preprocess.then(|| match &cfg.stopwords {
        Some(words) => Preprocessor::new(words.iter().map(String::as_str), cfg.filtered.iter().map(String::as_str)),
        None => Preprocessor::new(DEFAULT_STOPWORDS.iter().copied(), cfg.filtered.iter().map(String::as_str)),
    });
    let split = split_dataset(&records, cfg.train.seed);
    let clean = |r: &LabeledText| match &preprocessor {
        Some(p) => p.apply(&r.text),
        None => r.text.clone(),
    };
    let train_texts: Vec<String> = split.train.iter().map(clean).collect();
    let vocab = Vocabulary::build(train_texts.iter().map(String::as_str), cfg.model.vocab)?;
    let mut model_cfg = cfg.model;
    model_cfg.vocab = vocab.len();
    let s = model_cfg.max_seq_len;
    let (train_set, _) = encode_records(&split.train, &vocab, preprocessor.as_ref(), s);
    let (val_set, _) = encode_records(&split.validation, &vocab, preprocessor.as_ref(), s);
    let (test_set, _) = encode_records(&split.test, &vocab, preprocessor.as_ref(), s);

    let model = crate::model::Model::init(model_cfg, cfg.train.seed)?;
    let mut metrics = args.metrics.as_deref().map(create).transpose()?.map(csv::Writer::from_writer);
    if let Some(w) = metrics.as_mut() {
        w.write_record(["epoch", "train_loss", "val_accuracy"])?;
    }
    let mut csv_error = None;
    let outcome = train_with_callback(model, &train_set, &val_set, &cfg.train, |m| {
        let _ = writeln!(
            out,
            "epoch {} train_loss {:.6} val_accuracy {:.4}",
            m.epoch, m.train_loss, m.val_accuracy
        );
        if let Some(w) = metrics.as_mut() {
            let rec = [m.epoch.to_string(), m.train_loss.to_string(), m.val_accuracy.to_string()];
            if let Err(e) = w.write_record(rec) {
                csv_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = csv_error {
        return Err(e.into());
    }
    if let Some(mut w) = metrics {
        w.flush().map_err(csv::Error::from)?;
    }
    let test_acc = crate::training::accuracy(&outcome.model, &test_set)?;
    writeln!(out, "test_accuracy {test_acc:.4}").map_err(|e| Error::io("<stdout>", e))?;
    let ck = Checkpoint {
        model: outcome.model,
        vocab,
        preprocessor,
    };
    ck.save(&args.out, Some(&outcome.optimizer))
}

fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ck = args.model.load()?;
    let examples = load_examples(&ck, &args.data)?;
    let policy = args.policy.build()?;
    let (stream, labels) = split_examples(&examples);
    let engine = ModelEngine::new(&ck.model, &stream)?;
    let run = run_algorithm1(&engine, policy.as_ref(), args.batch_slots)?;
    let ratio = compute_ratio(&run.log, ck.model.depth())?;
    let layers = run.exit_layers();
    let mean_layer = layers.iter().sum::<usize>() as f64 / layers.len() as f64;
    writeln!(
        out,
        "samples {}\naccuracy {}\ncompute_ratio {}\nmean_exit_layer {}",
        layers.len(),
        run.accuracy(&labels),
        ratio,
        mean_layer
    )
    .map_err(|e| Error::io("<stdout>", e))?;
    if let Some(path) = &args.samples_out {
        write_samples_csv(create(path)?, &run, Some(&labels))?;
    }
    Ok(())
}

fn sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let ck = args.model.load()?;
    let examples = load_examples(&ck, &args.data)?;
    let grid = args.grid.clone().unwrap_or_else(default_grid);
    let base = args.policy.with_delta(0.0)?;
    let result = sweep_delta(&ck.model, &examples, &grid, &base, args.batch_slots)?;
    result.write_csv(create(&args.out)?)?;
    writeln!(out, "wrote {} rows to {}", result.rows.len(), args.out.display()).map_err(|e| Error::io("<stdout>", e))
}

fn schedule_sim(args: &ScheduleArgs, out: &mut dyn Write) -> Result<()> {
    let ck = args.model.load()?;
    let examples = load_examples(&ck, &args.data)?;
    let policy = args.policy.build()?;
    let mut cm = CostModel::default();
    if let Some(v) = args.step_fixed {
        cm.step_fixed = v;
    }
    if let Some(v) = args.step_per_slot {
        cm.step_per_slot = v;
    }
    if let Some(v) = args.embed_cost {
        cm.embed = v;
    }
    if let Some(v) = args.classifier_cost {
        cm.classifier = v;
    }
    cm.validate()?;

    let mut examples = examples;
    if let Some(seed) = args.seed {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        examples.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    }
    let (stream, labels) = split_examples(&examples);
    let engine = ModelEngine::new(&ck.model, &stream)?;
    let (rows, runs) = compare_strategies(&engine, policy.as_ref(), args.batch_slots, &cm, Some(&labels))?;
    let breakdown = SpeedupBreakdown::from_rows(&rows)?;
    let shown: Vec<_> = rows
        .iter()
        .filter(|r| args.strategy.is_none_or(|s| s == r.strategy))
        .cloned()
        .collect();
    write_comparison_csv(create(&args.out)?, &shown)?;
    if let Some(path) = &args.steps_out {
        let logs: Vec<_> = runs
            .iter()
            .map(|r| &r.log)
            .filter(|l| args.strategy.is_none_or(|s| s == l.strategy))
            .collect();
        write_steps_csv(create(path)?, &logs)?;
    }
    writeln!(
        out,
        "speedup early_exit {:.4} batching {:.4} total {:.4}",
        breakdown.early_exit, breakdown.batching, breakdown.total
    )
    .map_err(|e| Error::io("<stdout>", e))
}

fn trace_attention(args: &TraceArgs) -> Result<()> {
    let ck = args.model.load()?;
    let text = ck.clean(&args.text);
    let x = ck.vocab.encode(&text, ck.model.config().max_seq_len);
    let trace = attention::export_attention_trace(&ck.model, &x)?;
    let header = ck.vocab.decode(x.ids());
    attention::write_attention_csv(create(&args.out)?, &header, &trace)
}

fn preprocess_file(args: &PreprocessArgs, out: &mut dyn Write) -> Result<()> {
    let records = load_dataset(&args.input, args.classes)?;
    let filtered = args.filtered.iter().map(String::as_str);
    let p = match &args.stopwords {
        Some(words) => Preprocessor::new(words.iter().map(String::as_str), filtered),
        None => Preprocessor::new(DEFAULT_STOPWORDS.iter().copied(), filtered),
    };
    let mut kept = Vec::with_capacity(records.len());
    for r in &records {
        let text = p.apply(&r.text);
        if !text.is_empty() {
            kept.push(LabeledText::new(r.label, text));
        }
    }
    let dropped = records.len() - kept.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} record(s) with no text left after preprocessing");
    }
    save_dataset(&args.output, &kept)?;
    writeln!(out, "kept {} dropped {}", kept.len(), dropped).map_err(|e| Error::io("<stdout>", e))
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        keywords_per_class: args.keywords_per_class,
        noise_words: args.noise_words,
        min_noise: args.min_noise,
        max_noise: args.max_noise,
    };
    let data = synth_dataset(args.seed, args.n, args.classes, &spec)?;
    save_dataset(&args.out, &data)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::ScheduleSim(a) => schedule_sim(a, out),
        Command::TraceAttention(a) => trace_attention(a),
        Command::Preprocess(a) => preprocess_file(a, out),
        Command::Synth(a) => synth(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
