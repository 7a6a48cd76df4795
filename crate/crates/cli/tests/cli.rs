use std::path::{Path, PathBuf};
use std::process::Command;

use nces_cli::commands::{self, checkpoint_file, REPORT_FILE, TEST_FILE, TRAIN_FILE};
use nces_cli::{run, RunConfig};
use nces_core::datagen::read_dataset;
use nces_core::decode::{decode, ensemble, ScoreTensor};
use nces_core::embeddings::{lookup_examples, EmbeddingTable};
use nces_core::synth::{load_checkpoint, Architecture, ExampleSet};
use nces_core::{KnowledgeBase, Vocabulary};

fn family_kb() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/family.kb")
}

/// Small model sizes so each test trains in well under a second.
fn small(out: &Path) -> Vec<String> {
    let kb = family_kb();
    [
        "nces",
        "--kb",
        kb.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--dim",
        "8",
        "--heads",
        "2",
        "--inducing-points",
        "4",
        "--hidden-width",
        "16",
        "--length",
        "10",
        "--examples",
        "6",
        "--num-expressions",
        "120",
        "--batch-size",
        "16",
        "--lr",
        "0.003",
        "--epochs",
        "5",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn nces(out: &Path, extra: &[&str]) -> i32 {
    let mut args = small(out);
    args.extend(extra.iter().map(|s| s.to_string()));
    run(args)
}

fn config(out: &Path, extra: &[&str]) -> RunConfig {
    let mut args = small(out);
    args.extend(extra.iter().map(|s| s.to_string()));
    args.push("show-config".into());
    let cli = <nces_cli::Cli as clap::Parser>::try_parse_from(args).unwrap();
    nces_cli::resolve_config(&cli).unwrap()
}

fn prepared(extra: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nces(dir.path(), &["generate"]), 0);
    assert_eq!(nces(dir.path(), &["embed"]), 0);
    let mut train = extra.to_vec();
    train.push("train");
    assert_eq!(nces(dir.path(), &train), 0);
    dir
}

#[test]
fn defaults_mirror_the_published_hyperparameters() {
    let cfg = RunConfig::default();
    assert_eq!(
        (cfg.epochs, cfg.lr, cfg.dim, cfg.batch_size, cfg.length, cfg.inducing_points, cfg.clip),
        (500, 3e-4, 40, 256, 32, 32, 5.0)
    );
    assert_eq!(cfg.architectures, Architecture::ALL.to_vec());
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "epochs = 9\nseed = 4\narchitectures = [\"gru\"]\n").unwrap();
    let cli = <nces_cli::Cli as clap::Parser>::try_parse_from([
        "nces",
        "--config",
        path.to_str().unwrap(),
        "--seed",
        "11",
        "show-config",
    ])
    .unwrap();
    let cfg = nces_cli::resolve_config(&cli).unwrap();
    assert_eq!((cfg.epochs, cfg.seed), (9, 11));
    assert_eq!(cfg.architectures, vec![Architecture::Gru]);
}

#[test]
fn generate_writes_both_splits_with_default_example_count() {
    let dir = tempfile::tempdir().unwrap();
    let kb = family_kb();
    let code = run([
        "nces",
        "--kb",
        kb.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--seed",
        "1",
        "--num-expressions",
        "80",
        "--max-expression-length",
        "8",
        "generate",
    ]);
    assert_eq!(code, 0);
    let parsed = KnowledgeBase::load(&kb).unwrap();
    let train = read_dataset(dir.path().join(TRAIN_FILE), &parsed).unwrap();
    let test = read_dataset(dir.path().join(TEST_FILE), &parsed).unwrap();
    assert!(!train.is_empty() && !test.is_empty());
    // 12 individuals: n = min(12 / 2, 1000) = 6.
    assert_eq!(parsed.num_individuals(), 12);
    for p in train.iter().chain(&test) {
        assert_eq!(p.positives.len() + p.negatives.len(), 6);
    }
}

#[test]
fn embed_with_zero_epochs_still_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nces(dir.path(), &["--transe-epochs", "0", "embed"]), 0);
    let table = EmbeddingTable::load(dir.path().join(commands::EMBEDDINGS_FILE)).unwrap();
    assert_eq!(table.dim(), 8);
}

#[test]
fn embed_loss_decreases_on_the_toy_kb() {
    let dir = tempfile::tempdir().unwrap();
    let s = commands::embed(&config(dir.path(), &["--transe-epochs", "60"])).unwrap();
    assert!(s.losses.last().unwrap() < s.losses.first().unwrap(), "{:?}", s.losses);
}

#[test]
fn train_writes_checkpoints_and_metrics_logs() {
    let dir = prepared(&[]);
    for arch in Architecture::ALL {
        assert!(dir.path().join(checkpoint_file(arch)).exists());
        let log = std::fs::read_to_string(dir.path().join(commands::metrics_file(arch))).unwrap();
        let mut lines = log.lines();
        assert_eq!(lines.next(), Some("epoch,loss,soft_acc,hard_acc"));
        assert_eq!(lines.count(), 5);
    }
}

#[test]
fn one_problem_is_overfit() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nces(dir.path(), &["generate"]), 0);
    assert_eq!(nces(dir.path(), &["embed"]), 0);
    let train = std::fs::read_to_string(dir.path().join(TRAIN_FILE)).unwrap();
    let one = dir.path().join("one.tsv");
    std::fs::write(&one, format!("{}\n", train.lines().nth(3).unwrap())).unwrap();
    let cfg = config(dir.path(), &["--arch", "st", "--epochs", "150", "--lr", "0.01"]);
    let history = commands::train(&cfg, &one).unwrap();
    let last = history[0].1.last().unwrap();
    assert_eq!(last.hard_acc, 1.0, "{last:?}");
}

#[test]
fn synthesize_then_evaluate() {
    let dir = prepared(&[]);
    assert_eq!(nces(dir.path(), &["--ensemble", "st", "synthesize"]), 0);
    let runtimes = dir.path().join(commands::RUNTIMES_FILE);
    assert_eq!(nces(dir.path(), &["evaluate", "--runtimes", runtimes.to_str().unwrap()]), 0);
    let report = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
    let test = std::fs::read_to_string(dir.path().join(TEST_FILE)).unwrap();
    assert_eq!(report.lines().count(), 1 + test.lines().count() + 2);
    assert!(report.lines().any(|l| l.starts_with("mean,")));
    assert!(report.lines().any(|l| l.starts_with("std,")));
    let runtimes = std::fs::read_to_string(dir.path().join(commands::RUNTIMES_FILE)).unwrap();
    assert_eq!(runtimes.lines().count(), 1 + test.lines().count());
}

#[test]
fn ensemble_flag_matches_a_manual_average() {
    let dir = prepared(&["--arch", "lstm,gru"]);
    let cfg = config(dir.path(), &["--ensemble", "lstm,gru"]);
    let s = commands::synthesize(&cfg, &dir.path().join(TEST_FILE)).unwrap();

    let kb = KnowledgeBase::load(family_kb()).unwrap();
    let vocab = Vocabulary::from_kb(&kb).unwrap();
    let table = EmbeddingTable::load(dir.path().join(commands::EMBEDDINGS_FILE)).unwrap();
    let problems = read_dataset(dir.path().join(TEST_FILE), &kb).unwrap();
    let inputs: Vec<ExampleSet> = problems
        .iter()
        .map(|p| {
            let (positives, negatives) = lookup_examples(&table, p).unwrap();
            ExampleSet { positives, negatives }
        })
        .collect();
    let models: Vec<_> = [Architecture::Lstm, Architecture::Gru]
        .iter()
        .map(|&a| load_checkpoint(dir.path().join(checkpoint_file(a))).unwrap().to_model().unwrap())
        .collect();
    let per_model: Vec<_> = models.iter().map(|m| m.predict(&inputs).unwrap()).collect();
    for (i, text) in s.texts.iter().enumerate() {
        let [a, b] = [&per_model[0][i], &per_model[1][i]];
        let mut mean = a.clone();
        for (m, y) in mean.data_mut().iter_mut().zip(b.data()) {
            *m = (*m + y) / 2.0;
        }
        let manual = decode(&mean, &vocab).unwrap();
        let via_ensemble = ensemble(&[
            ScoreTensor { scores: a.clone(), fingerprint: vocab.fingerprint() },
            ScoreTensor { scores: b.clone(), fingerprint: vocab.fingerprint() },
        ])
        .unwrap();
        assert_eq!(&manual.text, text);
        assert_eq!(decode(&via_ensemble.scores, &vocab).unwrap().text, manual.text);
    }
}

#[test]
fn perfect_predictions_score_full_f1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nces(dir.path(), &["generate"]), 0);
    let kb = KnowledgeBase::load(family_kb()).unwrap();
    let test = read_dataset(dir.path().join(TEST_FILE), &kb).unwrap();
    let predictions: String = test
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{i}\t{}\n", p.target.as_ref().unwrap()))
        .collect();
    let path = dir.path().join("perfect.tsv");
    std::fs::write(&path, predictions).unwrap();
    let s = commands::evaluate(&config(dir.path(), &[]), &dir.path().join(TEST_FILE), &path, None).unwrap();
    assert_eq!(s.f1, (1.0, 0.0));
    assert_eq!(s.accuracy, (1.0, 0.0));
    assert_eq!(s.parse_rate, 1.0);
}

#[test]
fn aggregate_matches_hand_computed_values() {
    let dir = tempfile::tempdir().unwrap();
    let problems = dir.path().join("p.tsv");
    std::fs::write(
        &problems,
        "Male\tpos:bert,carl\tneg:anna,dora\n\
         Female\tpos:anna,dora\tneg:bert,carl\n\
         Parent\tpos:carl,dora\tneg:emil,fay\n",
    )
    .unwrap();
    let predictions = dir.path().join("q.tsv");
    // Male on its own problem: F1 1. Male on the Female problem: no true
    // positives, F1 0. ⊤ on the Parent problem: TP 2, FP 2, F1 4/6.
    std::fs::write(&predictions, "0\tMale\n1\tMale\n2\t⊤\n").unwrap();
    let s = commands::evaluate(&config(dir.path(), &[]), &problems, &predictions, None).unwrap();
    let f1 = [1.0, 0.0, 2.0 / 3.0];
    let mean = f1.iter().sum::<f64>() / 3.0;
    let std = (f1.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert!((s.f1.0 - mean).abs() < 1e-12 && (s.f1.1 - std).abs() < 1e-12, "{:?}", s.f1);
    // Accuracies 1, 0, 1/2.
    assert!((s.accuracy.0 - 0.5).abs() < 1e-12);
    let report = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
    assert!(report.contains("\nmean,,,1.000000,0.555556,0.500000,\n"), "{report}");

    let runtimes = dir.path().join("r.csv");
    std::fs::write(&runtimes, "index,seconds\n0,0.5\n1,1.0\n2,1.5\n").unwrap();
    let s = commands::evaluate(&config(dir.path(), &[]), &problems, &predictions, Some(&runtimes)).unwrap();
    assert_eq!(s.runtime, Some((1.0, 0.5)));
    let report = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
    assert!(report.lines().nth(3).unwrap().ends_with(",1.500000000"), "{report}");
}

#[test]
fn unparsable_predictions_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    let problems = dir.path().join("p.tsv");
    std::fs::write(&problems, "Male\tpos:bert\tneg:anna\n").unwrap();
    let predictions = dir.path().join("q.tsv");
    std::fs::write(&predictions, "0\t∃ hasChild.(\n").unwrap();
    let s = commands::evaluate(&config(dir.path(), &[]), &problems, &predictions, None).unwrap();
    assert_eq!((s.f1.0, s.parse_rate), (0.0, 0.0));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_nces");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code().unwrap();
    let out = dir.path().to_str().unwrap();

    assert_eq!(status(&["--help"]), 0);
    assert_eq!(status(&["no-such-command"]), 1);
    assert_eq!(status(&["--epochs", "0", "--kb", "x.kb", "generate"]), 1);
    assert_eq!(status(&["generate"]), 1, "missing knowledge base is a usage error");
    assert_eq!(status(&["--kb", "/no/such/file.kb", "--out-dir", out, "generate"]), 2);

    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    let prepared = prepared(&["--arch", "st"]);
    assert_eq!(
        nces(prepared.path(), &["--arch", "st", "synthesize", "--problems", empty.to_str().unwrap()]),
        2,
        "empty problem file"
    );
    assert_eq!(nces(prepared.path(), &["--arch", "st", "--lr", "1e300", "train"]), 3);
}
