use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use graphmod::datagen::{
    self, calibrate_p, generate_dataset, GenConfig, GraphSampler, Lexicon, ModificationInstance, Recipe,
    SimilarityTable, SplitSizes, TemplateSet,
};
use graphmod::eval::{self, MetricsReport};
use graphmod::graph::{EditKind, SceneGraph};
use graphmod::model::{EdgeDecoderKind, Fusion, ModelConfig};
use graphmod::train::{self, Checkpoint, TrainConfig};
use serde_json::json;

/// Conditional scene-graph modification: data generation, training,
/// evaluation and inference.
#[derive(Parser)]
#[command(name = "graphmod", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a corpus of base scene graphs from the built-in lexicon.
    Graphs(GraphsArgs),
    /// Build train/dev/test modification datasets from base graphs.
    Generate(GenerateArgs),
    /// Train a model and write the best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint, a predictions file or the copy-source baseline.
    Eval(EvalArgs),
    /// Apply a query to one source graph.
    Infer(InferArgs),
}

#[derive(Args)]
struct GraphsArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    /// JSONL file of base graphs.
    #[arg(long)]
    graphs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    train: usize,
    #[arg(long)]
    dev: usize,
    #[arg(long)]
    test: usize,
    /// Chain several edits per instance.
    #[arg(long)]
    multi: bool,
    /// Target mean edit count; P is calibrated to hit it.
    #[arg(long, requires = "multi")]
    mean_ops: Option<f64>,
    /// Terminate weight, used as is when --mean-ops is absent.
    #[arg(long, requires = "multi", conflicts_with = "mean_ops")]
    p: Option<f64>,
    #[arg(long, default_value_t = 1.0, requires = "multi")]
    tau: f64,
    /// Draws used to estimate the mean edit count during calibration.
    #[arg(long, default_value_t = 10_000)]
    calibration_samples: usize,
    /// Single-edit kinds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "insert,delete,substitute", conflicts_with = "multi")]
    kinds: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.jsonl and dev.jsonl.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    fusion: Option<Fusion>,
    #[arg(long)]
    edge_decoder: Option<EdgeDecoderKind>,
    /// Flat key=value file of model and training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Directory of user-written data mixed one to one into every batch.
    #[arg(long)]
    mix: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present_any = ["predictions", "copy_source"], conflicts_with_all = ["predictions", "copy_source"])]
    checkpoint: Option<PathBuf>,
    /// JSONL of predicted graphs, one per dataset line.
    #[arg(long, conflicts_with = "copy_source")]
    predictions: Option<PathBuf>,
    #[arg(long)]
    copy_source: bool,
    /// JSONL dataset.
    #[arg(long)]
    data: PathBuf,
    /// Add per-operation-count rows to the table.
    #[arg(long)]
    bins: bool,
    /// Print a text table instead of JSON.
    #[arg(long)]
    table: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSON file holding one scene graph.
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    query: String,
}

fn read_records<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    datagen::read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn write_records<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    datagen::write_jsonl(BufWriter::new(f), records)?;
    Ok(())
}

fn graphs(a: GraphsArgs) -> Result<()> {
    let corpus = GraphSampler::new(&Lexicon::builtin()).sample_corpus(a.count, a.seed);
    write_records(&a.out, &corpus)?;
    println!("{}", json!({ "graphs": corpus.len() }));
    Ok(())
}

fn edit_kind(name: &str) -> Result<EditKind> {
    Ok(match name.trim() {
        "insert" => EditKind::Insert,
        "delete" => EditKind::Delete,
        "substitute" => EditKind::Substitute,
        other => bail!("unknown edit kind {other:?}"),
    })
}

fn generate(a: GenerateArgs) -> Result<()> {
    let base: Vec<SceneGraph> = read_records(&a.graphs)?;
    let sim = SimilarityTable::builtin();
    let mut p_used = None;
    let recipe = if a.multi {
        let p = match (a.mean_ops, a.p) {
            (Some(target), _) => calibrate_p(&base, target, a.tau, &sim, a.calibration_samples, a.seed)?,
            (None, Some(p)) => p,
            (None, None) => GenConfig::default().p,
        };
        p_used = Some(p);
        Recipe::Multi(GenConfig { p, tau: a.tau, seed: a.seed, ..GenConfig::default() })
    } else {
        Recipe::Single(a.kinds.iter().map(|k| edit_kind(k)).collect::<Result<_>>()?)
    };
    let sizes = SplitSizes { train: a.train, dev: a.dev, test: a.test };
    let ds = generate_dataset(&base, &recipe, &TemplateSet::default(), &sim, sizes, a.seed, a.jobs)?;
    fs::create_dir_all(&a.out)?;
    for (name, split) in [("train", &ds.train), ("dev", &ds.dev), ("test", &ds.test)] {
        write_records(&a.out.join(format!("{name}.jsonl")), split)?;
    }
    let ops: usize = ds.train.iter().chain(&ds.dev).chain(&ds.test).map(ModificationInstance::num_ops).sum();
    let mean_ops = ops as f64 / sizes.total().max(1) as f64;
    println!(
        "{}",
        json!({ "train": ds.train.len(), "dev": ds.dev.len(), "test": ds.test.len(), "p": p_used, "mean_ops": mean_ops })
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (mut model, mut cfg) = (ModelConfig::default(), TrainConfig::default());
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        train::parse_config(&text, &mut model, &mut cfg)?;
    }
    if let Some(f) = a.fusion {
        model.fusion = f;
    }
    if let Some(e) = a.edge_decoder {
        model.edge_decoder = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let train_set: Vec<ModificationInstance> = read_records(&a.data.join("train.jsonl"))?;
    let dev_set: Vec<ModificationInstance> = read_records(&a.data.join("dev.jsonl"))?;
    let user: Option<Vec<ModificationInstance>> = match &a.mix {
        Some(dir) => {
            cfg.mix = true;
            Some(read_records(&dir.join("train.jsonl"))?)
        }
        None => None,
    };
    let mut out = std::io::stdout().lock();
    let outcome = train::fit(&train_set, &dev_set, user.as_deref(), &model, &cfg, |log| {
        let _ = writeln!(out, "{}", serde_json::to_string(log).expect("log serializes"));
    })?;
    drop(out);
    let c = &outcome.checkpoint;
    c.save(&a.out)?;
    println!("{}", json!({ "checkpoint": a.out, "epoch": c.epoch, "dev_graph_accuracy": c.dev_accuracy }));
    Ok(())
}

fn print_report(r: &MetricsReport, table: bool, bins: bool) {
    if table {
        print!("{}", r.table(bins));
    } else {
        println!("{}", r.to_json());
    }
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let data: Vec<ModificationInstance> = read_records(&a.data)?;
    let report = if a.copy_source {
        eval::copy_source(&data)
    } else if let Some(path) = &a.predictions {
        let preds: Vec<SceneGraph> = read_records(path)?;
        eval::score(&preds, &data, true)?
    } else {
        let path = a.checkpoint.as_ref().expect("clap requires one mode");
        let ckpt = Checkpoint::load(path)?;
        eval::evaluate(&ckpt.model, &data, a.jobs)?
    };
    print_report(&report, a.table, a.bins);
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let text = fs::read_to_string(&a.source).with_context(|| format!("reading {}", a.source.display()))?;
    let source: SceneGraph = serde_json::from_str(text.trim()).context("parsing source graph")?;
    let pred = ckpt.model.generate(&source, &a.query)?;
    println!("{}", serde_json::to_string(&pred)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Graphs(a) => graphs(a),
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Infer(a) => infer(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
