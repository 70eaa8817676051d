use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use treerel::checkpoint::Checkpoint;
use treerel::conll::ParseIndex;
use treerel::corpus::split_validation;
use treerel::embed::{ConcatEmbedder, EmbeddingTable};
use treerel::evalcli::{
    evaluate_model, run_ablation, train_model, Dataset, EvalOptions, Grid, ABLATION_HEADER,
};
use treerel::metrics::{ConfusionMatrix, EvalReport, MissingPolicy};
use treerel::pipeline::PrepareOptions;
use treerel::toy;
use treerel::train::TrainConfig;

const SMALL: &str = "max_epochs = 40\npatience = 40\nhidden = 16\n";

fn write_toy(dir: &Path, docs: usize) {
    toy::generate(docs, 1, "TR").write(dir, "train").unwrap();
    toy::generate(docs / 2, 2, "TE").write(dir, "test").unwrap();
}

fn grid_toml(rows: &str) -> String {
    format!(
        "validation = 6\nseed = 3\n{rows}\n[data]\nabstracts = \"train.xml\"\nrelations = \"train.rel\"\nparses = \"train.conllx\"\n\
         [test]\nabstracts = \"test.xml\"\nrelations = \"test.rel\"\nparses = \"test.conllx\"\n\
         [embeddings]\ntoy = \"train.vec\"\n[train]\n{SMALL}"
    )
}

fn toy_dataset(docs: usize, seed: u64, prefix: &str) -> (Dataset, ConcatEmbedder) {
    let corpus = toy::generate(docs, seed, prefix);
    let table = EmbeddingTable::read(corpus.embeddings.as_bytes(), "toy", None).unwrap();
    let data = Dataset::new(corpus.documents, ParseIndex::new(corpus.sentences));
    (data, ConcatEmbedder::shared(vec![Arc::new(table)], seed))
}

fn trained(data: &Dataset, embedder: &ConcatEmbedder) -> Checkpoint {
    let split = split_validation(&data.docs, 6, 2).unwrap();
    let config = TrainConfig { max_epochs: 80, patience: 80, ..TrainConfig::default() };
    train_model(&split.train, &split.validation, &data.parses, embedder, &config, PrepareOptions::default())
        .unwrap()
        .checkpoint
}

#[test]
fn memorized_toy_scores_perfectly_and_reproducibly() {
    let (data, embedder) = toy_dataset(30, 4, "R");
    // Validating on the training documents selects the first memorizing epoch.
    let config = TrainConfig { max_epochs: 300, patience: 20, ..TrainConfig::default() };
    let checkpoint = train_model(&data.docs, &data.docs, &data.parses, &embedder, &config, PrepareOptions::default())
        .unwrap()
        .checkpoint;
    let report = evaluate_model(&checkpoint, &data.docs, &data.parses, &embedder, EvalOptions::default()).unwrap();
    assert_eq!(report.macro_f1(), 1.0, "{}", report.summary());
    assert_eq!(report.instances, 30);
    let mut diagonal = ConfusionMatrix::new();
    for label in treerel::RelationLabel::ALL {
        for _ in 0..5 {
            diagonal.add(label, Some(label));
        }
    }
    assert_eq!(report.confusion, diagonal);

    let again = evaluate_model(&checkpoint, &data.docs, &data.parses, &embedder, EvalOptions::default()).unwrap();
    assert_eq!(serde_json::to_string(&again).unwrap(), serde_json::to_string(&report).unwrap());
}

#[test]
fn reloaded_checkpoint_evaluates_identically() {
    let (data, embedder) = toy_dataset(18, 5, "R");
    let checkpoint = trained(&data, &embedder);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_json(), checkpoint.to_json());
    let a = evaluate_model(&checkpoint, &data.docs, &data.parses, &embedder, EvalOptions::default()).unwrap();
    let b = evaluate_model(&loaded, &data.docs, &data.parses, &embedder, EvalOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unpreparable_instances_count_against_recall_unless_skipped() {
    let (mut data, embedder) = toy_dataset(12, 6, "R");
    let checkpoint = trained(&data, &embedder);
    // Dropping one document's parse makes its relation unpreparable.
    let sentences: Vec<_> = toy::generate(12, 6, "R").sentences.into_iter().filter(|s| s.doc_id != "R0").collect();
    data.parses = ParseIndex::new(sentences);
    let counted = evaluate_model(&checkpoint, &data.docs, &data.parses, &embedder, EvalOptions::default()).unwrap();
    assert_eq!(counted.missing, 1);
    assert_eq!(counted.missing_policy, MissingPolicy::CountAsError);
    assert_eq!(counted.confusion.missed[0], 1);
    let skipped = evaluate_model(
        &checkpoint,
        &data.docs,
        &data.parses,
        &embedder,
        EvalOptions { skip_missing: true, ..EvalOptions::default() },
    )
    .unwrap();
    assert_eq!(skipped.instances, 11);
    assert_eq!(skipped.confusion.missed, [0; 6]);
    let u = treerel::RelationLabel::Usage;
    assert!(counted.label(u).recall < skipped.label(u).recall || skipped.label(u).recall == 0.0);
}

#[test]
fn five_feature_rows_fill_every_score_column() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), 30);
    let rows = ["none", "dep", "dep,pos", "dep,pos,entlen", "dep,pos,entlen,height"]
        .iter()
        .map(|f| format!("[[rows]]\nfeatures = \"{f}\"\nembeddings = [\"toy\"]\n"))
        .collect::<String>();
    let path = dir.path().join("grid.toml");
    // Rows must precede the tables in TOML, so they are appended last.
    std::fs::write(&path, format!("{}\n{rows}", grid_toml(""))).unwrap();
    let grid = Grid::load(&path).unwrap();
    let table = run_ablation(&grid).unwrap();
    assert_eq!(table.rows.len(), 5);
    let csv = table.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(ABLATION_HEADER));
    for line in lines {
        // Names and feature lists may be quoted; the trailing cells never are.
        let cells: Vec<&str> = line.rsplitn(11, ',').collect();
        assert_eq!(cells.len(), 11, "{line}");
        assert_eq!(cells[0], "ok");
        for cell in &cells[1..10] {
            let value: f64 = cell.parse().unwrap_or_else(|_| panic!("empty score cell in {line}"));
            assert!((0.0..=100.0).contains(&value));
        }
    }
    for row in &table.rows {
        assert_eq!(row.report.as_ref().unwrap().table_cells().len(), 9);
    }
}

#[test]
fn repeated_rows_match_each_other_and_a_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), 24);
    let row = "[[rows]]\nfeatures = \"dep,pos\"\nembeddings = [\"toy\"]\n";
    let path = dir.path().join("grid.toml");
    std::fs::write(&path, format!("{}\n{row}{row}", grid_toml(""))).unwrap();
    let grid = Grid::load(&path).unwrap();
    let table = run_ablation(&grid).unwrap();
    assert_eq!(table.rows[0], table.rows[1]);

    // The same composition by hand.
    let data = Dataset::load(&grid.data).unwrap();
    let test = Dataset::load(grid.test.as_ref().unwrap()).unwrap();
    let split = split_validation(&data.docs, 6, 3).unwrap();
    let table_file = EmbeddingTable::load(&grid.embeddings["toy"], "toy", None).unwrap();
    let embedder = ConcatEmbedder::new(vec![table_file], 3);
    let config = TrainConfig {
        features: "dep,pos".parse().unwrap(),
        seed: 3,
        ..grid.train.clone()
    };
    let model = train_model(&split.train, &split.validation, &data.parses, &embedder, &config, PrepareOptions::default())
        .unwrap();
    let report: EvalReport =
        evaluate_model(&model.checkpoint, &test.docs, &test.parses, &embedder, EvalOptions::default()).unwrap();
    assert_eq!(table.rows[0].report.as_ref(), Some(&report));
    assert_eq!(table.rows[0].selected_epoch, Some(model.checkpoint.selected_epoch));
}

#[test]
fn failing_row_does_not_stop_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), 18);
    let rows = "[[rows]]\nfeatures = \"dep\"\nembeddings = [\"missing\"]\n[[rows]]\nfeatures = \"dep\"\nembeddings = [\"toy\"]\n";
    let path = dir.path().join("grid.toml");
    std::fs::write(&path, format!("{}\n{rows}", grid_toml(""))).unwrap();
    let table = run_ablation(&Grid::load(&path).unwrap()).unwrap();
    assert!(table.rows[0].error.as_deref().unwrap().contains("missing"));
    assert!(table.rows[1].report.is_some());
    assert!(table.to_csv().lines().nth(1).unwrap().contains("FAILED"));
}

fn treerel(args: &[&str], dir: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_treerel"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "treerel {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn command_line_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    treerel(&["toy", "--out", ".", "--docs", "30", "--seed", "2"], d);
    let data = ["--data", "train.xml", "--relations", "train.rel", "--parses", "train.conllx", "--emb", "toy:train.vec"];
    let mut train_args = vec!["train"];
    train_args.extend(data);
    train_args.extend([
        "--hidden", "16", "--epochs", "60", "--patience", "60", "--validation", "6", "--out", "model.json",
        "--log", "log.jsonl", "--split", "split.txt",
    ]);
    let stdout = treerel(&train_args, d);
    assert!(stdout.contains("selected epoch"), "{stdout}");
    for f in ["model.json", "log.jsonl", "split.txt"] {
        assert!(d.join(f).exists(), "{f} missing");
    }

    let test = ["--data", "test.xml", "--relations", "test.rel", "--parses", "test.conllx", "--emb", "toy:train.vec"];
    let mut eval_args = vec!["eval", "--model", "model.json", "--report", "report.json", "--confusion", "cm.csv"];
    eval_args.extend(test);
    let first = treerel(&eval_args, d);
    let report_a = std::fs::read_to_string(d.join("report.json")).unwrap();
    let second = treerel(&eval_args, d);
    assert_eq!(first, second);
    assert_eq!(std::fs::read_to_string(d.join("report.json")).unwrap(), report_a);
    let report: EvalReport = serde_json::from_str(&report_a).unwrap();
    let cm = ConfusionMatrix::from_csv(&std::fs::read_to_string(d.join("cm.csv")).unwrap()).unwrap();
    assert_eq!(cm, report.confusion);

    let mut wrong_source = eval_args.clone();
    *wrong_source.last_mut().unwrap() = "other:train.vec";
    let status = Command::new(env!("CARGO_BIN_EXE_treerel"))
        .args(&wrong_source)
        .current_dir(d)
        .output()
        .unwrap()
        .status;
    assert!(!status.success());
}

#[test]
fn command_line_ablation_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), 18);
    let rows = "feature_sets = [\"none\", \"dep,pos,entlen\"]\nembedding_sets = [[\"toy\"]]\n";
    std::fs::write(dir.path().join("grid.toml"), grid_toml(rows)).unwrap();
    let stdout = treerel(&["ablate", "--grid", "grid.toml", "--out", "table.csv", "--json", "table.json"], dir.path());
    let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(stdout, csv);
    assert_eq!(csv.lines().count(), 3);
}
