//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`cargo test --test acceptance`) so the report is
//! printed on every run. Exits non-zero when any criterion fails.
//!
//! Optional inputs through the environment:
//! - `TREEREL_DATA_DIR`: directory holding the subtask-1.1 training files
//!   `1.1.text.xml` and `1.1.relations.txt`.
//! - `TREEREL_FULL_GRID`: grid file for the full-scale stretch run; its
//!   first row is trained and scored. A score outside the band prints
//!   MISS and does not fail the run.

use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treerel::conll::ParseIndex;
use treerel::corpus::{label_histogram, parse_abstract_file, parse_relation_file, split_validation};
use treerel::embed::{ConcatEmbedder, EmbeddingTable};
use treerel::evalcli::{run_ablation, train_model, Dataset, Grid};
use treerel::features::{FeatureConfig, NodeEncoder};
use treerel::label::{RelationLabel, NUM_LABELS};
use treerel::metrics::{score, ConfusionMatrix};
use treerel::model::{
    logits, loss_and_backward, node_forward, tree_forward, EncodedTree, Mode, NodeState,
    TreeLstmParams,
};
use treerel::pipeline::{build_vocab, encode, prepare, Example, PrepareOptions};
use treerel::toy;
use treerel::train::{predict_all, TrainConfig, Trainer};
use treerel::tree::{DepNode, DepTree};

enum Status {
    Pass,
    Fail,
    Skip,
    NotRun,
    /// Outside a stretch band: reported for investigation, not a failure.
    Miss,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome { status: Status::Pass, detail: detail.into() }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome { status: Status::Fail, detail: detail.into() }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(n: usize, r: &mut ChaCha8Rng, scale: f64) -> Array1<f64> {
    Array1::from_iter((0..n).map(|_| r.random_range(-scale..scale)))
}

/// Params with non-trivial biases so every gate sits away from 0.5.
fn random_params(input: usize, hidden: usize, r: &mut ChaCha8Rng) -> TreeLstmParams {
    let mut p = TreeLstmParams::init(input, hidden, r.random());
    for b in [&mut p.b_i, &mut p.b_f, &mut p.b_o, &mut p.b_u, &mut p.b_y] {
        b.mapv_inplace(|v| v + r.random_range(-0.5..0.5));
    }
    p
}

/// Post-order tree from a parent array where every parent index is larger
/// than its child's and the last node is the root.
fn tree_from_parents(parents: &[usize], inputs: Vec<Array1<f64>>) -> EncodedTree {
    let mut children = vec![Vec::new(); parents.len() + 1];
    for (k, &p) in parents.iter().enumerate() {
        children[p].push(k);
    }
    EncodedTree::new(inputs, children).expect("parents point forward")
}

// ---------------------------------------------------------------------------
// Gradient check

fn reference_loss(params: &TreeLstmParams, tree: &EncodedTree, gold: usize) -> f64 {
    let (root, _) = tree_forward(params, tree, 0.0, Mode::Eval, &mut rng(0)).unwrap();
    let z = logits(params, &root.h);
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[gold]
}

fn gradient_check() -> Outcome {
    const EPS: f64 = 1e-5;
    // Fixed shapes guarantee 0, 1 and >=3 children; the rest are random.
    let fixed: [&[usize]; 4] = [&[], &[1, 2], &[3, 3, 3], &[1, 5, 3, 5, 5]];
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    let mut coverage = [0usize; 3];
    let mut coords = 0usize;
    let started = Instant::now();
    let instances = 24;
    for inst in 0..instances {
        let parents: Vec<usize> = match fixed.get(inst) {
            Some(p) => p.to_vec(),
            None => {
                let n = r.random_range(1..=6usize);
                (0..n - 1).map(|k| r.random_range(k + 1..n)).collect()
            }
        };
        let n = parents.len() + 1;
        let hidden = r.random_range(2..=8);
        let input = r.random_range(1..=10);
        let params = random_params(input, hidden, &mut r);
        let inputs = (0..n).map(|_| random_vec(input, &mut r, 1.0)).collect();
        let tree = tree_from_parents(&parents, inputs);
        for k in 0..n {
            match tree.children(k).len() {
                0 => coverage[0] += 1,
                1 => coverage[1] += 1,
                c if c >= 3 => coverage[2] += 1,
                _ => {}
            }
        }
        let gold = r.random_range(0..NUM_LABELS);
        let (_, tape) = tree_forward(&params, &tree, 0.0, Mode::Train, &mut rng(0)).unwrap();
        let (_, grads) = loss_and_backward(&params, &tape, gold).unwrap();
        let analytic = grads.0.tensors();
        let mut probe = params.clone();
        for (t, tensor) in analytic.iter().enumerate() {
            for (i, &a) in tensor.iter().enumerate() {
                let orig = probe.tensors()[t][i];
                probe.tensors_mut()[t][i] = orig + EPS;
                let up = reference_loss(&probe, &tree, gold);
                probe.tensors_mut()[t][i] = orig - EPS;
                let down = reference_loss(&probe, &tree, gold);
                probe.tensors_mut()[t][i] = orig;
                let numeric = (up - down) / (2.0 * EPS);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
                coords += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    let covered = coverage.iter().all(|&c| c > 0);
    verdict(
        worst < 1e-4 && covered && elapsed < Duration::from_secs(30),
        format!(
            "{instances} instances, {coords} coordinates, max relative error {worst:.2e}, \
             nodes with 0/1/>=3 children {coverage:?}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// Child-sum symmetry

fn child_sum_symmetry() -> Outcome {
    let mut r = rng(77);
    let mut worst = 0.0f64;
    let cases = 1000;
    for _ in 0..cases {
        let hidden = r.random_range(1..=8);
        let input = r.random_range(1..=10);
        let params = random_params(input, hidden, &mut r);
        let k = r.random_range(2..=6);
        let kids: Vec<NodeState> = (0..k)
            .map(|_| {
                let x = random_vec(input, &mut r, 1.0);
                node_forward(&params, x.view(), &[]).unwrap()
            })
            .collect();
        let x = random_vec(input, &mut r, 1.0);
        let mut order: Vec<usize> = (0..k).collect();
        let base_refs: Vec<&NodeState> = order.iter().map(|&i| &kids[i]).collect();
        let base = node_forward(&params, x.view(), &base_refs).unwrap();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
        let perm_refs: Vec<&NodeState> = order.iter().map(|&i| &kids[i]).collect();
        let perm = node_forward(&params, x.view(), &perm_refs).unwrap();
        for (a, b) in base.h.iter().zip(&perm.h).chain(base.c.iter().zip(&perm.c)) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst <= 1e-12, format!("{cases} permutations, max |difference| {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// Chain equivalence

/// Textbook LSTM step on plain vectors.
fn lstm_step(p: &TreeLstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hidden = p.hidden_size();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let gate = |w: &ndarray::Array2<f64>, u: &ndarray::Array2<f64>, b: &Array1<f64>, r: usize| {
        let mut s = b[r];
        for (j, xj) in x.iter().enumerate() {
            s += w[[r, j]] * xj;
        }
        for (j, hj) in h.iter().enumerate() {
            s += u[[r, j]] * hj;
        }
        s
    };
    let mut h_new = vec![0.0; hidden];
    let mut c_new = vec![0.0; hidden];
    for r in 0..hidden {
        let i = sig(gate(&p.w_i, &p.u_i, &p.b_i, r));
        let f = sig(gate(&p.w_f, &p.u_f, &p.b_f, r));
        let o = sig(gate(&p.w_o, &p.u_o, &p.b_o, r));
        let u = gate(&p.w_u, &p.u_u, &p.b_u, r).tanh();
        c_new[r] = i * u + f * c[r];
        h_new[r] = o * c_new[r].tanh();
    }
    (h_new, c_new)
}

fn chain_equivalence() -> Outcome {
    let mut r = rng(31);
    let mut worst = 0.0f64;
    let trees = 100;
    for _ in 0..trees {
        let n = r.random_range(1..=12);
        let hidden = r.random_range(1..=8);
        let input = r.random_range(1..=10);
        let params = random_params(input, hidden, &mut r);
        let xs: Vec<Array1<f64>> = (0..n).map(|_| random_vec(input, &mut r, 1.0)).collect();
        let parents: Vec<usize> = (1..n).collect();
        let tree = tree_from_parents(&parents, xs.clone());
        let (_, tape) = tree_forward(&params, &tree, 0.0, Mode::Eval, &mut rng(0)).unwrap();
        let (mut h, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
        for (k, x) in xs.iter().enumerate() {
            // A leaf sees zero state, matching the empty child sum.
            let (h1, c1) = lstm_step(&params, x.as_slice().unwrap(), &h, &c);
            h = h1;
            c = c1;
            let s = tape.state(k);
            for (a, b) in s.h.iter().zip(&h).chain(s.c.iter().zip(&c)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    verdict(worst <= 1e-10, format!("{trees} chains, max |difference| {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// Subtree oracle

fn ancestors(parent: &[Option<usize>], mut v: usize) -> Vec<usize> {
    let mut out = vec![v];
    while let Some(p) = parent[v] {
        out.push(p);
        v = p;
    }
    out
}

fn subtree_oracle() -> Outcome {
    let mut r = rng(5);
    let trials = 500;
    let mut mismatches = 0;
    let mut first = String::new();
    for t in 0..trials {
        let n = r.random_range(1..=25);
        // Random labelled tree: shuffle positions, attach each to an earlier one.
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let mut parent = vec![None; n];
        for k in 1..n {
            parent[perm[k]] = Some(perm[r.random_range(0..k)]);
        }
        let nodes = (0..n)
            .map(|i| DepNode {
                form: format!("w{i}"),
                pos: "X".into(),
                deprel: "dep".into(),
                parent: parent[i],
                children: Vec::new(),
                span: (i, i + 1),
            })
            .collect();
        let tree = DepTree::from_nodes(nodes).unwrap();
        let (h1, h2) = (r.random_range(0..n), r.random_range(0..n));
        let sub = tree.spanning_subtree(h1, h2).unwrap();

        let a1 = ancestors(&parent, h1);
        let a2 = ancestors(&parent, h2);
        let lca = *a1.iter().find(|v| a2.contains(v)).unwrap();
        let mut expected: Vec<usize> = a1.iter().take_while(|&&v| v != lca).copied().collect();
        expected.extend(a2.iter().take_while(|&&v| v != lca));
        expected.push(lca);
        expected.sort_unstable();
        expected.dedup();
        let depth = |v: usize| ancestors(&parent, v).len() - 1;
        let size_ok = sub.len() == depth(h1) + depth(h2) - 2 * depth(lca) + 1;

        // Heights by the recursive definition over the oracle's node set.
        fn height(v: usize, set: &[usize], parent: &[Option<usize>]) -> usize {
            set.iter()
                .filter(|&&c| parent[c] == Some(v))
                .map(|&c| 1 + height(c, set, parent))
                .max()
                .unwrap_or(0)
        }
        let heights_ok = expected
            .iter()
            .all(|&v| sub.height(v).ok() == Some(height(v, &expected, &parent)));

        if sub.nodes() != expected.as_slice() || sub.root() != lca || !size_ok || !heights_ok {
            mismatches += 1;
            if first.is_empty() {
                first = format!("; first mismatch at trial {t}: got {:?}, expected {expected:?}", sub.nodes());
            }
        }
    }
    verdict(
        mismatches == 0,
        format!("{trials} random trees up to 25 nodes, {mismatches} mismatches{first}"),
    )
}

// ---------------------------------------------------------------------------
// Metric oracle

fn metric_oracle() -> Outcome {
    // Gold rows, predicted columns, in label order U, M-F, P-W, C, R, T.
    let counts: [[u64; 6]; 6] = [
        [143, 15, 9, 6, 1, 1],
        [13, 38, 10, 0, 3, 1],
        [15, 8, 44, 3, 0, 0],
        [1, 1, 2, 14, 3, 0],
        [4, 2, 0, 1, 13, 0],
        [2, 0, 0, 0, 0, 1],
    ];
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for (g, row) in counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            for _ in 0..c {
                gold.push(RelationLabel::ALL[g]);
                pred.push(RelationLabel::ALL[p]);
            }
        }
    }
    // Hand-summed: diagonal, gold row totals, predicted column totals.
    let tp = [143.0, 38.0, 44.0, 14.0, 13.0, 1.0];
    let rows = [175.0, 65.0, 70.0, 21.0, 20.0, 3.0];
    let cols = [178.0, 64.0, 65.0, 24.0, 20.0, 3.0];
    let report = score(&gold, &pred).unwrap();
    let mut worst = 0.0f64;
    for k in 0..6 {
        let s = &report.labels[k];
        let p = tp[k] / cols[k];
        let r = tp[k] / rows[k];
        let f = 2.0 * tp[k] / (rows[k] + cols[k]);
        worst = worst
            .max((s.precision - p).abs())
            .max((s.recall - r).abs())
            .max((s.f1 - f).abs());
    }
    let mean = report.labels.iter().map(|s| s.f1).sum::<f64>() / 6.0;
    let cm_ok = report.confusion == ConfusionMatrix { counts, missed: [0; 6] };
    let u = report.label(RelationLabel::Usage);
    verdict(
        worst <= 1e-9 && report.macro_f1() == mean && cm_ok,
        format!(
            "max deviation {worst:.1e}; U P={:.4} R={:.4} F1={:.4}; macro F1 {:.4} equals mean of labels: {}",
            u.precision,
            u.recall,
            u.f1,
            report.macro_f1(),
            report.macro_f1() == mean
        ),
    )
}

// ---------------------------------------------------------------------------
// Toy-corpus training

fn toy_examples(docs: usize, seed: u64, prefix: &str) -> (Vec<Example>, ConcatEmbedder, usize) {
    let corpus = toy::generate(docs, seed, prefix);
    let data = Dataset::new(corpus.documents.clone(), ParseIndex::new(corpus.sentences.clone()));
    let prepared = prepare(&data.docs, &data.parses, PrepareOptions::default());
    let vocab = build_vocab(&prepared).unwrap();
    let table = EmbeddingTable::read(Cursor::new(corpus.embeddings.as_bytes()), "toy", None).unwrap();
    let embedder = ConcatEmbedder::new(vec![table], seed);
    let encoder = NodeEncoder { vocab: &vocab, config: FeatureConfig::ALL, embedder: &embedder };
    let width = encoder.width();
    let examples = encode(&prepared, &encoder).unwrap();
    (examples, embedder, width)
}

fn overfit() -> Outcome {
    let (examples, _, width) = toy_examples(20, 11, "O");
    let config = TrainConfig { threads: 1, ..TrainConfig::default() };
    let started = Instant::now();
    let mut params = TreeLstmParams::init(width, config.hidden, config.seed);
    let mut trainer = Trainer::new(&config, &examples, &params).unwrap();
    let gold: Vec<RelationLabel> = examples.iter().map(|e| e.label).collect();
    let mut reached = None;
    let mut accuracy = 0.0;
    for epoch in 1..=300 {
        trainer.train_epoch(&mut params, epoch).unwrap();
        let predicted = predict_all(&params, &examples).unwrap();
        let correct = predicted.iter().zip(&gold).filter(|(p, g)| p == g).count();
        accuracy = correct as f64 / gold.len() as f64;
        if correct == gold.len() {
            reached = Some(epoch);
            break;
        }
    }
    let elapsed = started.elapsed();
    verdict(
        reached.is_some() && elapsed < Duration::from_secs(60),
        format!(
            "{} instances, hidden {}, dropout {}, batch {}: {} ({:.2}s, single-threaded)",
            examples.len(),
            config.hidden,
            config.dropout,
            config.batch_size,
            match reached {
                Some(e) => format!("100% training accuracy at epoch {e}"),
                None => format!("{:.0}% training accuracy after 300 epochs", 100.0 * accuracy),
            },
            elapsed.as_secs_f64()
        ),
    )
}

fn determinism() -> Outcome {
    let corpus = toy::generate(36, 3, "D");
    let data = Dataset::new(corpus.documents.clone(), ParseIndex::new(corpus.sentences.clone()));
    let split = split_validation(&data.docs, 8, 3).unwrap();
    let table = EmbeddingTable::read(Cursor::new(corpus.embeddings.as_bytes()), "toy", None).unwrap();
    let embedder = ConcatEmbedder::new(vec![table], 3);
    let config = TrainConfig { hidden: 24, max_epochs: 12, patience: 12, seed: 9, ..TrainConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str, config: &TrainConfig| {
        let m = train_model(&split.train, &split.validation, &data.parses, &embedder, config, PrepareOptions::default())
            .unwrap();
        let ck = dir.path().join(format!("{tag}.json"));
        let log = dir.path().join(format!("{tag}.jsonl"));
        m.checkpoint.save(&ck).unwrap();
        std::fs::write(&log, m.log.to_jsonl()).unwrap();
        let tensors = m.checkpoint.params().unwrap();
        (std::fs::read(ck).unwrap(), std::fs::read(log).unwrap(), tensors)
    };
    let a = run("a", &config);
    let b = run("b", &config);
    let threaded = run("c", &TrainConfig { threads: 4, ..config.clone() });
    verdict(
        a == b && threaded.1 == a.1 && threaded.2 == a.2,
        format!(
            "two single-threaded runs: checkpoints {} ({} bytes), logs {}; \
             4-thread run gives identical weights and log: {}",
            if a.0 == b.0 { "identical" } else { "differ" },
            a.0.len(),
            if a.1 == b.1 { "identical" } else { "differ" },
            threaded.1 == a.1 && threaded.2 == a.2
        ),
    )
}

// ---------------------------------------------------------------------------
// Corpus totals

fn corpus_totals() -> Outcome {
    let Some(dir) = std::env::var_os("TREEREL_DATA_DIR").map(PathBuf::from) else {
        return Outcome {
            status: Status::Skip,
            detail: "TREEREL_DATA_DIR not set; official subtask-1.1 training files absent".into(),
        };
    };
    let (text, rels) = (dir.join("1.1.text.xml"), dir.join("1.1.relations.txt"));
    if !text.exists() || !rels.exists() {
        return Outcome {
            status: Status::Skip,
            detail: format!("{} or {} not found", text.display(), rels.display()),
        };
    }
    let mut docs = match parse_abstract_file(&std::fs::read_to_string(&text).unwrap()) {
        Ok(d) => d,
        Err(e) => return fail(format!("{}: {e}", text.display())),
    };
    if let Err(e) = parse_relation_file(&std::fs::read_to_string(&rels).unwrap(), &mut docs) {
        return fail(format!("{}: {e}", rels.display()));
    }
    let split = split_validation(&docs, 50, 1).unwrap();
    let train = label_histogram(split.train.iter().flat_map(|d| &d.relations));
    let val = label_histogram(split.validation.iter().flat_map(|d| &d.relations));
    let combined: Vec<usize> = train.iter().zip(&val).map(|(a, b)| a + b).collect();
    // Published train + validation rows.
    let expected: [usize; 6] = [409 + 74, 289 + 37, 215 + 19, 86 + 9, 57 + 15, 15 + 3];
    verdict(
        combined == expected.as_slice(),
        format!("{} documents, combined counts {combined:?}, expected {expected:?}", docs.len()),
    )
}

// ---------------------------------------------------------------------------
// Full-scale stretch run

fn full_scale() -> Outcome {
    let Some(path) = std::env::var_os("TREEREL_FULL_GRID").map(PathBuf::from) else {
        return Outcome {
            status: Status::NotRun,
            detail: "stretch check; set TREEREL_FULL_GRID to a grid with the official data and both embedding sources".into(),
        };
    };
    let mut grid = match Grid::load(&path) {
        Ok(g) => g,
        Err(e) => return fail(e.to_string()),
    };
    let mut rows = grid.expanded_rows();
    rows.truncate(1);
    grid.rows = rows;
    match run_ablation(&grid) {
        Ok(t) => match &t.rows[0].report {
            Some(r) => {
                let f1 = 100.0 * r.macro_f1();
                Outcome {
                    status: if (f1 - 60.9).abs() <= 5.0 { Status::Pass } else { Status::Miss },
                    detail: format!("macro F1 {f1:.1} against the band 60.9 +/- 5"),
                }
            }
            None => fail(t.rows[0].error.clone().unwrap_or_default()),
        },
        Err(e) => fail(e.to_string()),
    }
}

type Check = fn() -> Outcome;

fn main() {
    let checks: [(&str, Check); 9] = [
        ("gradient correctness", gradient_check),
        ("child-sum symmetry", child_sum_symmetry),
        ("chain equivalence", chain_equivalence),
        ("subtree oracle", subtree_oracle),
        ("metric oracle", metric_oracle),
        ("overfit check", overfit),
        ("determinism", determinism),
        ("corpus totals", corpus_totals),
        ("full-scale reproduction", full_scale),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            fail(format!("panicked: {msg}"))
        });
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
            Status::NotRun => "NOT RUN",
            Status::Miss => "MISS",
        };
        println!("{tag:<8} {name}: {}", outcome.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
