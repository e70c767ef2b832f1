mod inspect;
mod run_config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rksa::attention::ForwardMode;
use rksa::checkpoint::Checkpoint;
use rksa::config::{ItemKernel, KernelSet};
use rksa::corpus::{load_interactions, PreparedDataset, SplitPart};
use rksa::eval::{evaluate, EvalConfig, EvalMetrics};
use rksa::train::{grad_check, train, GradCheckConfig};
use rksa::{Error, ModelError};
use serde::Serialize;

use run_config::{output_path, RunConfig};

#[derive(Parser)]
#[command(name = "rksa", version, about = "Relation-aware kernelized self-attention recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a `user item` log, split it and count co-occurrences.
    Prepare {
        input: PathBuf,
        #[arg(long, default_value = "prepared")]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        max_len: usize,
    },
    /// Train a model and write the best checkpoint and a JSON-lines log.
    Train(TrainArgs),
    /// Evaluate a checkpoint over one or more seeds.
    Eval(EvalArgs),
    /// Finite-difference gradient check on a tiny model.
    Gradcheck {
        #[arg(long, default_value = "C+I+U")]
        kernel: KernelSet,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Export correlation, kernel-weight, attention, embedding and rank CSVs.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML (or .json) run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prepared dataset (`dataset.json` from `prepare`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory; relative paths resolve under `$RKSA_OUTPUT_ROOT` when set.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Sampled negatives per validation user.
    #[arg(long)]
    k_neg: Option<usize>,
    /// Active kernels, e.g. `C`, `I+U`, `C+I+U`.
    #[arg(long)]
    kernel: Option<KernelSet>,
    #[arg(long)]
    item_kernel: Option<ItemKernel>,
    /// Deterministic scaled-dot attention without kernels or rank loss.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    part: Part,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    mode: Option<ForwardMode>,
    #[arg(long)]
    k_neg: Option<usize>,
    #[arg(long)]
    full_catalog: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw user id; its test prefix is inspected unless `--items` is given.
    #[arg(long)]
    user: Option<u64>,
    /// Comma-separated raw item ids forming a synthetic sequence.
    #[arg(long, value_delimiter = ',')]
    items: Option<Vec<u64>>,
    #[arg(long)]
    mode: Option<ForwardMode>,
    /// Sampled negatives for the per-frequency rank export.
    #[arg(long)]
    k_neg: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Part {
    Valid,
    Test,
}

/// Exit 1 usage, 2 data, 3 numerical.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Model(m) => Failure::Numeric(m.to_string()),
            Error::InvalidArgument(m) => Failure::Usage(m),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Error::from(e).into()
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let help = matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion);
            return ExitCode::from(if help { 0 } else { 1 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Prepare { input, out, max_len } => prepare(&input, &output_path(&out), max_len),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck { kernel, seed } => cmd_gradcheck(kernel, seed),
        Command::Inspect(args) => cmd_inspect(args),
    }
}

fn prepare(input: &Path, out: &Path, max_len: usize) -> Result<(), Failure> {
    let log = load_interactions(input)?;
    let data = PreparedDataset::from_log(log, max_len)?;
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let path = out.join("dataset.json");
    data.save_json(&path)?;
    let s = data.stats();
    println!("{:>8} {:>8} {:>10} {:>12} {:>12}", "users", "items", "actions", "avg/user", "avg/item");
    println!(
        "{:>8} {:>8} {:>10} {:>12.2} {:>12.2}",
        s.users, s.items, s.actions, s.avg_actions_per_user, s.avg_actions_per_item
    );
    if data.dropped_users > 0 {
        println!("dropped {} users with fewer than 3 actions", data.dropped_users);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn load_run_config(common: &CommonArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &common.out {
        cfg.output_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn load_data(cfg: &RunConfig) -> Result<PreparedDataset, Failure> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Failure::Usage("no dataset: pass --data or set `data` in the config".into()))?;
    Ok(PreparedDataset::load_json(path)?)
}

fn out_dir(cfg: &RunConfig, default: &str) -> Result<PathBuf, Failure> {
    let dir = output_path(cfg.output_dir.as_deref().unwrap_or(Path::new(default)));
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    Ok(dir)
}

/// Writes the log to a file and prints a progress line to stderr after each validation.
struct LogTee {
    file: BufWriter<File>,
    line: Vec<u8>,
}

impl LogTee {
    fn report(&self) {
        let Ok(v) = serde_json::from_slice::<serde_json::Value>(&self.line) else {
            return;
        };
        if let Some(hit) = v["val_hit10"].as_f64() {
            eprintln!(
                "epoch {:>4} step {:>7} loss {:.5} lr {:.2e} val Hit@10 {:.4} NDCG@10 {:.4}",
                v["epoch"], v["step"], v["total"].as_f64().unwrap_or(f64::NAN), v["lr"].as_f64().unwrap_or(f64::NAN),
                hit, v["val_ndcg10"].as_f64().unwrap_or(f64::NAN)
            );
        }
    }
}

impl Write for LogTee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        for &b in buf {
            if b == b'\n' {
                self.report();
                self.line.clear();
            } else {
                self.line.push(b);
            }
        }
        self.file.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.file.flush()
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = load_run_config(&args.common)?;
    let t = &mut cfg.train;
    macro_rules! set {
        ($($field:ident <- $flag:expr),*) => {$( if let Some(v) = $flag { t.$field = v; } )*};
    }
    set!(seed <- args.seed, max_epochs <- args.epochs, lr <- args.lr, batch_size <- args.batch_size,
         dim <- args.dim, blocks <- args.blocks, heads <- args.heads, dropout <- args.dropout,
         lambda_r <- args.lambda_r, patience <- args.patience, k_neg_eval <- args.k_neg);
    if args.max_steps.is_some() {
        t.max_steps = args.max_steps;
    }
    if let Some(k) = args.kernel {
        t.kernel.active = k;
    }
    if let Some(v) = args.item_kernel {
        t.kernel.item_variant = v;
    }
    t.baseline |= args.baseline;
    let data = load_data(&cfg)?;
    let dir = out_dir(&cfg, "run")?;
    let log_path = dir.join("train_log.jsonl");
    let file = File::create(&log_path).map_err(|e| io_failure(&log_path, e))?;
    let mut tee = LogTee {
        file: BufWriter::new(file),
        line: Vec::new(),
    };
    let outcome = train(&cfg.train, &data.split, &data.cooc, Some(&mut tee))?;
    tee.flush().map_err(|e| io_failure(&log_path, e))?;
    let ckpt = dir.join("best.ckpt");
    outcome.best.save(&ckpt)?;
    let used = dir.join("config.json");
    let json = serde_json::to_string_pretty(&cfg).map_err(|e| Failure::Data(e.to_string()))?;
    std::fs::write(&used, json).map_err(|e| io_failure(&used, e))?;
    println!(
        "stopped ({:?}) after {} steps; best epoch {} val Hit@10 {}",
        outcome.stop,
        outcome.log.last().map_or(0, |r| r.step),
        outcome.best.epoch,
        outcome.best_val_hit10.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    println!("wrote {}, {}", ckpt.display(), log_path.display());
    Ok(())
}

#[derive(Serialize)]
struct SeedRecord {
    dataset: String,
    mode: ForwardMode,
    seed: u64,
    hit: std::collections::BTreeMap<usize, f64>,
    ndcg: std::collections::BTreeMap<usize, f64>,
    n_users: usize,
}

#[derive(Serialize)]
struct Aggregate {
    mean: f64,
    sd: f64,
}

fn mean_sd(xs: &[f64]) -> Aggregate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Aggregate { mean, sd: var.sqrt() }
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let mut cfg = load_run_config(&args.common)?;
    if let Some(s) = args.seeds {
        cfg.eval.seeds = s;
    }
    if let Some(m) = args.mode {
        cfg.eval.mode = m;
    }
    if let Some(k) = args.k_neg {
        cfg.eval.k_neg = k;
    }
    cfg.eval.full_catalog |= args.full_catalog;
    if cfg.eval.seeds.is_empty() {
        return Err(Failure::Usage("at least one seed is required".into()));
    }
    let data = load_data(&cfg)?;
    let model = Checkpoint::load(&args.checkpoint)?.model()?;
    let part = match args.part {
        Part::Valid => SplitPart::Valid,
        Part::Test => SplitPart::Test,
    };
    let dataset = cfg.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
    let dir = out_dir(&cfg, "eval")?;
    let mut records = Vec::new();
    let mut runs: Vec<EvalMetrics> = Vec::new();
    for &seed in &cfg.eval.seeds {
        let ec = EvalConfig {
            mode: cfg.eval.mode,
            seed,
            k_neg: cfg.eval.k_neg,
            ks: vec![1, 5, 10],
            full_catalog: cfg.eval.full_catalog,
        };
        let m = evaluate(&model, &data.split, &data.cooc, part, &ec)?;
        let ranks_path = dir.join(format!("ranks_seed{seed}.csv"));
        let mut w = csv::Writer::from_path(&ranks_path).map_err(|e| Failure::Data(e.to_string()))?;
        w.write_record(["user", "target", "rank"]).map_err(|e| Failure::Data(e.to_string()))?;
        for r in &m.per_user_ranks {
            let user = data.user_ids.decode(r.user).unwrap_or(r.user as u64);
            let item = data.item_ids.decode(r.target).unwrap_or(r.target as u64);
            w.write_record([user.to_string(), item.to_string(), r.rank.to_string()])
                .map_err(|e| Failure::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| io_failure(&ranks_path, e))?;
        let keep = |m: &std::collections::BTreeMap<usize, f64>| m.iter().filter(|(k, _)| [5, 10].contains(*k)).map(|(k, v)| (*k, *v)).collect();
        records.push(SeedRecord {
            dataset: dataset.clone(),
            mode: m.mode,
            seed,
            hit: keep(&m.hit),
            ndcg: keep(&m.ndcg),
            n_users: m.n_users,
        });
        runs.push(m);
    }
    let collect = |f: &dyn Fn(&EvalMetrics) -> f64| -> Aggregate { mean_sd(&runs.iter().map(f).collect::<Vec<_>>()) };
    let summary = serde_json::json!({
        "runs": records,
        "aggregate": {
            "hit5": collect(&|m| m.hit[&5]),
            "hit10": collect(&|m| m.hit[&10]),
            "ndcg5": collect(&|m| m.ndcg[&5]),
            "ndcg10": collect(&|m| m.ndcg[&10]),
        }
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Data(e.to_string()))?;
    let path = dir.join("metrics.json");
    std::fs::write(&path, &text).map_err(|e| io_failure(&path, e))?;
    println!("{text}");
    Ok(())
}

fn cmd_gradcheck(kernel: KernelSet, seed: u64) -> Result<(), Failure> {
    let cfg = GradCheckConfig {
        kernels: kernel,
        seed,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&cfg)?;
    println!("{:<40} {:>8} {:>12} {:>12}", "tensor", "entries", "max_rel", "max_abs");
    for t in &report.tensors {
        println!("{:<40} {:>8} {:>12.3e} {:>12.3e}", t.name, t.entries, t.max_rel_error, t.max_abs_error);
    }
    let failures = report.failures();
    if failures.is_empty() {
        println!("all {} tensors within {:e}", report.tensors.len(), report.tolerance);
        Ok(())
    } else {
        let names: Vec<&str> = failures.iter().map(|t| t.name.as_str()).collect();
        Err(Failure::Numeric(format!("gradient check failed for {}", names.join(", "))))
    }
}

fn cmd_inspect(args: InspectArgs) -> Result<(), Failure> {
    let cfg = load_run_config(&args.common)?;
    let data = load_data(&cfg)?;
    let model = Checkpoint::load(&args.checkpoint)?.model()?;
    let seq = inspect::resolve_sequence(&data, args.user, args.items.as_deref())?;
    let eval = EvalConfig {
        mode: args.mode.unwrap_or(cfg.eval.mode),
        seed: cfg.eval.seeds.first().copied().unwrap_or(0),
        k_neg: args.k_neg.unwrap_or(cfg.eval.k_neg),
        full_catalog: cfg.eval.full_catalog,
        ..EvalConfig::default()
    };
    let dir = out_dir(&cfg, "inspect")?;
    for path in inspect::run(&model, &data, &seq, eval, &dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
