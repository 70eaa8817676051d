use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use treerel::checkpoint::Checkpoint;
use treerel::corpus::split_validation;
use treerel::embed::{parse_source_spec, ConcatEmbedder};
use treerel::evalcli::{
    embedder_for, evaluate_model, load_tables, run_ablation, train_model, DataPaths, Dataset,
    EvalOptions, Grid,
};
use treerel::features::FeatureConfig;
use treerel::optim::OptimizerConfig;
use treerel::pipeline::PrepareOptions;
use treerel::toy;
use treerel::train::TrainConfig;

#[derive(Parser)]
#[command(name = "treerel", version, about = "Tree-LSTM relation classification over dependency subtrees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model with validation-based epoch selection.
    Train(TrainArgs),
    /// Score a trained model on annotated data.
    Eval(EvalArgs),
    /// Run a grid of feature and embedding configurations.
    Ablate(AblateArgs),
    /// Write a small synthetic corpus for smoke tests.
    Toy(ToyArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Abstract file with inline entity markup.
    #[arg(long)]
    data: PathBuf,
    /// Relation file, one `LABEL(id1,id2[,REVERSE])` per line.
    #[arg(long)]
    relations: PathBuf,
    /// Dependency parses with character offsets.
    #[arg(long)]
    parses: PathBuf,
}

impl DataArgs {
    fn paths(&self) -> DataPaths {
        DataPaths {
            abstracts: self.data.clone(),
            relations: self.relations.clone(),
            parses: self.parses.clone(),
        }
    }
}

#[derive(Args)]
struct EmbArgs {
    /// Embedding source as name:path; repeat to concatenate in order.
    #[arg(long = "emb", required = true)]
    emb: Vec<String>,
    /// Read at most this many vectors per source.
    #[arg(long)]
    emb_limit: Option<usize>,
}

impl EmbArgs {
    fn sources(&self) -> Result<Vec<(String, PathBuf)>> {
        self.emb
            .iter()
            .map(|s| {
                let (name, path) = parse_source_spec(s)?;
                Ok((name, PathBuf::from(path)))
            })
            .collect()
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    emb: EmbArgs,
    /// Subset of dep,pos,entlen,height, or none.
    #[arg(long, default_value = "dep,pos,entlen")]
    features: FeatureConfig,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 200)]
    hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Plain SGD instead of Adam.
    #[arg(long)]
    sgd: bool,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Documents held out for validation.
    #[arg(long, default_value_t = 50)]
    validation: usize,
    /// Weight the loss by inverse label frequency.
    #[arg(long)]
    class_weights: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Keep cross-sentence pairs by joining their sentences.
    #[arg(long)]
    cross_sentence: bool,
    /// Match embedding keys by exact form only.
    #[arg(long)]
    no_case_fallback: bool,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch log, one JSON object per line.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write the train/validation document split here.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    emb: EmbArgs,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    confusion: Option<PathBuf>,
    /// Leave unpreparable instances out of the scores instead of counting
    /// them as errors.
    #[arg(long)]
    skip_missing: bool,
    #[arg(long)]
    cross_sentence: bool,
    /// Also print macro scores over labels that occur.
    #[arg(long)]
    exclude_absent: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    grid: PathBuf,
    /// CSV table.
    #[arg(long)]
    out: PathBuf,
    /// Full reports as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    docs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn train(args: TrainArgs) -> Result<()> {
    let data = Dataset::load(&args.data.paths())?;
    let split = split_validation(&data.docs, args.validation, args.seed)?;
    if let Some(p) = &args.split {
        write(p, split.manifest())?;
    }
    let tables = load_tables(&args.emb.sources()?, args.emb.emb_limit)?;
    let embedder = ConcatEmbedder::shared(tables, args.seed).with_case_fallback(!args.no_case_fallback);
    let optimizer = if args.sgd {
        OptimizerConfig::Sgd { lr: args.lr }
    } else {
        OptimizerConfig::default().with_learning_rate(args.lr)
    };
    let config = TrainConfig {
        batch_size: args.batch,
        dropout: args.dropout,
        hidden: args.hidden,
        optimizer,
        max_epochs: args.epochs,
        patience: args.patience,
        seed: args.seed,
        features: args.features,
        class_weights: args.class_weights,
        threads: args.threads,
    };
    let trained = train_model(
        &split.train,
        &split.validation,
        &data.parses,
        &embedder,
        &config,
        PrepareOptions {
            cross_sentence: args.cross_sentence,
        },
    )?;
    trained.checkpoint.save(&args.out)?;
    if let Some(p) = &args.log {
        write(p, trained.log.to_jsonl())?;
    }
    let best = trained.log.selected().expect("fit marks one epoch");
    println!(
        "selected epoch {} of {} (validation macro-F1 {:.4}); model written to {}",
        best.epoch,
        trained.log.epochs.len(),
        best.val_macro_f1,
        args.out.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.model)?;
    let data = Dataset::load(&args.data.paths())?;
    let tables = load_tables(&args.emb.sources()?, args.emb.emb_limit)?;
    let embedder = embedder_for(&checkpoint, tables)?;
    let report = evaluate_model(
        &checkpoint,
        &data.docs,
        &data.parses,
        &embedder,
        EvalOptions {
            skip_missing: args.skip_missing,
            cross_sentence: args.cross_sentence,
        },
    )?;
    print!("{}", report.summary());
    if args.skip_missing {
        println!("instances without a prediction were left out (--skip-missing)");
    }
    if args.exclude_absent {
        let m = report.macro_present();
        println!(
            "macro over occurring labels: P {:.1} R {:.1} F1 {:.1}",
            100.0 * m.precision,
            100.0 * m.recall,
            100.0 * m.f1
        );
    }
    if let Some(p) = &args.report {
        write(p, serde_json::to_string_pretty(&report)?)?;
    }
    if let Some(p) = &args.confusion {
        write(p, report.confusion.to_csv())?;
    }
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let grid = Grid::load(&args.grid)?;
    let table = run_ablation(&grid)?;
    write(&args.out, table.to_csv())?;
    if let Some(p) = &args.json {
        write(p, serde_json::to_string_pretty(&table)?)?;
    }
    print!("{}", table.to_csv());
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        bail!("{failed} of {} rows failed", table.rows.len());
    }
    Ok(())
}

fn make_toy(args: ToyArgs) -> Result<()> {
    let train = toy::generate(args.docs, args.seed, "TRAIN");
    let test = toy::generate(args.docs / 2 + 1, args.seed.wrapping_add(1), "TEST");
    let p = train.write(&args.out, "train")?;
    test.write(&args.out, "test")?;
    println!("toy corpus written to {}", args.out.display());
    println!(
        "try: treerel train --data {} --relations {} --parses {} --emb toy:{} --hidden 16 --validation {} --out model.json",
        p.abstracts.display(),
        p.relations.display(),
        p.parses.display(),
        p.embeddings.display(),
        (args.docs / 5).max(1)
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Toy(a) => make_toy(a),
    }
}
