use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::info;
use nces_core::datagen::{
    default_example_count, filter_redundant, generate_expressions, make_learning_problems, read_dataset,
    split_train_test, write_dataset, LearningProblem,
};
use nces_core::decode::{decode, ensemble, mean_std, semantic_quality, ScoreTensor};
use nces_core::embeddings::{kb_to_triples, lookup_examples, train_transe, EmbeddingTable, TransEConfig};
use nces_core::expr::parse_with;
use nces_core::synth::{
    load_checkpoint, prepare_examples, save_checkpoint, train as train_model, Architecture, EpochMetrics, ExampleSet,
    Model, ModelConfig, TrainConfig,
};
use nces_core::{Error, KnowledgeBase, Reasoner, Vocabulary};

use crate::{CliError, RunConfig};

pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const RUNTIMES_FILE: &str = "runtimes.csv";
pub const REPORT_FILE: &str = "report.csv";

pub fn checkpoint_file(arch: Architecture) -> String {
    format!("model_{arch}.json")
}

pub fn metrics_file(arch: Architecture) -> String {
    format!("metrics_{arch}.csv")
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn ensure_output_dir(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e).into())
}

fn load_kb(cfg: &RunConfig) -> Result<KnowledgeBase, CliError> {
    Ok(KnowledgeBase::load(cfg.kb_path()?)?)
}

fn load_problems(path: &Path, kb: &KnowledgeBase) -> Result<Vec<LearningProblem>, CliError> {
    let problems = read_dataset(path, kb)?;
    if problems.is_empty() {
        return Err(Error::Data(format!("{}: no learning problems", path.display())).into());
    }
    Ok(problems)
}

fn load_embeddings(cfg: &RunConfig) -> Result<EmbeddingTable, CliError> {
    let table = EmbeddingTable::load(cfg.out(EMBEDDINGS_FILE))?;
    if table.dim() != cfg.dim {
        return Err(Error::Data(format!(
            "embeddings have dimension {}, the configuration asks for {}",
            table.dim(),
            cfg.dim
        ))
        .into());
    }
    Ok(table)
}

fn example_sets(table: &EmbeddingTable, problems: &[LearningProblem]) -> Result<Vec<ExampleSet>, CliError> {
    problems
        .iter()
        .map(|p| {
            let (positives, negatives) = lookup_examples(table, p)?;
            Ok(ExampleSet { positives, negatives })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateSummary {
    pub generated: usize,
    pub kept: usize,
    pub train: usize,
    pub test: usize,
}

/// Generates expressions, drops semantic duplicates, samples examples and
/// splits the problems into train and test files.
pub fn generate(cfg: &RunConfig) -> Result<GenerateSummary, CliError> {
    let kb = load_kb(cfg)?;
    let max_len = cfg.max_expression_length.unwrap_or(cfg.length);
    let exprs = generate_expressions(&kb, max_len, cfg.num_expressions, cfg.seed)?;
    let kept = filter_redundant(&kb, &exprs)?;
    let n = cfg.examples.unwrap_or_else(|| default_example_count(kb.num_individuals()));
    let problems = make_learning_problems(&kb, &kept, n, cfg.seed.wrapping_add(1))?;
    let (train, test) = split_train_test(&problems, cfg.split_ratio, cfg.seed.wrapping_add(2))?;
    ensure_output_dir(cfg)?;
    write_dataset(cfg.out(TRAIN_FILE), &train)?;
    write_dataset(cfg.out(TEST_FILE), &test)?;
    Ok(GenerateSummary {
        generated: exprs.len(),
        kept: kept.len(),
        train: train.len(),
        test: test.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedSummary {
    pub triples: usize,
    pub entities: usize,
    /// Mean margin loss per epoch.
    pub losses: Vec<f64>,
}

pub fn embed(cfg: &RunConfig) -> Result<EmbedSummary, CliError> {
    let kb = load_kb(cfg)?;
    let store = kb_to_triples(&kb)?;
    let transe = TransEConfig {
        dim: cfg.dim,
        epochs: cfg.transe_epochs,
        margin: cfg.transe_margin,
        lr: cfg.transe_lr,
    };
    let (table, losses) = train_transe(&store, &transe, cfg.seed)?;
    ensure_output_dir(cfg)?;
    table.save(cfg.out(EMBEDDINGS_FILE))?;
    Ok(EmbedSummary {
        triples: store.triples.len(),
        entities: store.entities.len(),
        losses,
    })
}

pub fn model_config(cfg: &RunConfig, arch: Architecture, vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        heads: cfg.heads,
        inducing_points: cfg.inducing_points,
        hidden: cfg.hidden_width,
        ..ModelConfig::new(arch, cfg.dim, cfg.length, vocab.num_tokens())
    }
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,loss,soft_acc,hard_acc\n");
    for m in history {
        let _ = writeln!(out, "{},{},{},{}", m.epoch, m.loss, m.soft_acc, m.hard_acc);
    }
    out
}

/// Trains every configured architecture from the same seed, writing a
/// checkpoint and a metrics log for each.
pub fn train(cfg: &RunConfig, data: &Path) -> Result<Vec<(Architecture, Vec<EpochMetrics>)>, CliError> {
    let kb = load_kb(cfg)?;
    let vocab = Vocabulary::from_kb(&kb)?;
    let table = load_embeddings(cfg)?;
    let problems = load_problems(data, &kb)?;
    let examples = prepare_examples(&problems, &table, &vocab, cfg.length)?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        clip: cfg.clip,
        seed: cfg.seed,
        stop_at_hard_accuracy: cfg.stop_at_hard_accuracy,
    };
    ensure_output_dir(cfg)?;
    let mut results = Vec::new();
    for &arch in &cfg.architectures {
        info!("training {arch} on {} problems", examples.len());
        let mut model = Model::new(model_config(cfg, arch, &vocab), cfg.seed)?;
        let history = train_model(&mut model, &examples, &train_cfg, |_| {})?;
        write(&cfg.out(&metrics_file(arch)), &metrics_csv(&history))?;
        save_checkpoint(cfg.out(&checkpoint_file(arch)), &model, &vocab.fingerprint())?;
        results.push((arch, history));
    }
    Ok(results)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisSummary {
    pub problems: usize,
    pub parsed: usize,
    pub mean_seconds: f64,
    pub texts: Vec<String>,
}

fn load_members(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Vec<Model>, CliError> {
    cfg.synthesis_members()
        .iter()
        .map(|&arch| {
            let ck = load_checkpoint(cfg.out(&checkpoint_file(arch)))?;
            ck.check_fingerprint(&vocab.fingerprint())?;
            if ck.config.architecture != arch {
                return Err(Error::Data(format!("{} holds a {} model", checkpoint_file(arch), ck.config.architecture)).into());
            }
            Ok(ck.to_model()?)
        })
        .collect()
}

/// Batched synthesis. With more than one member the score tensors are
/// averaged before decoding. A problem's runtime is its share of the batch
/// forward pass plus its own decoding time.
pub fn synthesize(cfg: &RunConfig, problems_path: &Path) -> Result<SynthesisSummary, CliError> {
    let kb = load_kb(cfg)?;
    let vocab = Vocabulary::from_kb(&kb)?;
    let table = load_embeddings(cfg)?;
    let problems = load_problems(problems_path, &kb)?;
    let models = load_members(cfg, &vocab)?;
    let fingerprint = vocab.fingerprint();
    let inputs = example_sets(&table, &problems)?;

    let mut texts = Vec::with_capacity(problems.len());
    let mut runtimes = Vec::with_capacity(problems.len());
    let mut parsed = 0;
    for chunk in inputs.chunks(cfg.batch_size) {
        let start = Instant::now();
        let mut scores: Vec<Vec<ScoreTensor>> = vec![Vec::with_capacity(models.len()); chunk.len()];
        for model in &models {
            for (slot, s) in scores.iter_mut().zip(model.predict(chunk)?) {
                slot.push(ScoreTensor {
                    scores: s,
                    fingerprint: fingerprint.clone(),
                });
            }
        }
        let shared = start.elapsed().as_secs_f64() / chunk.len() as f64;
        for members in scores {
            let start = Instant::now();
            let averaged = if members.len() > 1 {
                ensemble(&members)?.scores
            } else {
                members.into_iter().next().expect("at least one member").scores
            };
            let result = decode(&averaged, &vocab)?;
            runtimes.push(shared + start.elapsed().as_secs_f64());
            parsed += usize::from(result.parse_ok());
            texts.push(result.text);
        }
    }

    ensure_output_dir(cfg)?;
    let mut predictions = String::new();
    let mut timing = String::from("index,seconds\n");
    for (i, (text, secs)) in texts.iter().zip(&runtimes).enumerate() {
        let _ = writeln!(predictions, "{i}\t{text}");
        let _ = writeln!(timing, "{i},{secs:.9}");
    }
    write(&cfg.out(PREDICTIONS_FILE), &predictions)?;
    write(&cfg.out(RUNTIMES_FILE), &timing)?;
    Ok(SynthesisSummary {
        problems: problems.len(),
        parsed,
        mean_seconds: runtimes.iter().sum::<f64>() / runtimes.len() as f64,
        texts,
    })
}

/// Reads `index<TAB>expression` lines; the index must count up from 0.
pub fn read_predictions(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let (index, expr) = line.split_once('\t').unwrap_or((line, ""));
            if index.parse::<usize>().ok() != Some(i) {
                return Err(Error::Data(format!("{}: line {}: expected index {i}", path.display(), i + 1)).into());
            }
            Ok(expr.to_string())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    /// Mean and sample standard deviation.
    pub f1: (f64, f64),
    pub accuracy: (f64, f64),
    pub parse_rate: f64,
    /// Mean and standard deviation of the synthesis runtimes, when given.
    pub runtime: Option<(f64, f64)>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Reads `index,seconds` rows as written by `synthesize`.
pub fn read_runtimes(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Data(format!("{}: line {}: expected `{i},<seconds>`", path.display(), i + 2));
            let (index, secs) = line.split_once(',').ok_or_else(bad)?;
            if index.parse::<usize>().ok() != Some(i) {
                return Err(bad().into());
            }
            Ok(secs.parse::<f64>().map_err(|_| bad())?)
        })
        .collect()
}

/// Writes a per-problem report with mean and standard deviation footer rows.
/// The runtime column stays empty unless a runtimes file is given, so the
/// report of a rerun is byte-identical.
pub fn evaluate(
    cfg: &RunConfig,
    problems_path: &Path,
    predictions_path: &Path,
    runtimes_path: Option<&Path>,
) -> Result<EvalSummary, CliError> {
    let kb = load_kb(cfg)?;
    let problems = load_problems(problems_path, &kb)?;
    let predictions = read_predictions(predictions_path)?;
    let runtimes = runtimes_path.map(read_runtimes).transpose()?;
    for (what, len) in [("predictions", Some(predictions.len())), ("runtimes", runtimes.as_ref().map(Vec::len))] {
        if let Some(len) = len.filter(|&l| l != problems.len()) {
            return Err(Error::Data(format!("{len} {what} for {} problems", problems.len())).into());
        }
    }
    let reasoner = Reasoner::new(&kb);
    let mut report = String::from("index,target,prediction,parse_ok,f1,accuracy,runtime_seconds\n");
    let (mut f1s, mut accs, mut parsed) = (Vec::new(), Vec::new(), 0usize);
    for (i, (problem, text)) in problems.iter().zip(&predictions).enumerate() {
        let expr = parse_with(text, &kb).ok();
        let q = semantic_quality(&reasoner, problem, expr.as_ref())?;
        let target = problem.target.as_ref().map(|t| t.render()).unwrap_or_default();
        let runtime = runtimes.as_ref().map(|r| format!("{:.9}", r[i])).unwrap_or_default();
        let _ = writeln!(
            report,
            "{i},{},{},{},{:.6},{:.6},{runtime}",
            csv_field(&target),
            csv_field(text),
            q.parse_ok,
            q.f1,
            q.accuracy
        );
        f1s.push(q.f1);
        accs.push(q.accuracy);
        parsed += usize::from(q.parse_ok);
    }
    let summary = EvalSummary {
        f1: mean_std(&f1s),
        accuracy: mean_std(&accs),
        parse_rate: parsed as f64 / problems.len() as f64,
        runtime: runtimes.as_deref().map(mean_std),
    };
    let (rt_mean, rt_std) = summary
        .runtime
        .map(|(m, s)| (format!("{m:.9}"), format!("{s:.9}")))
        .unwrap_or_default();
    let _ = writeln!(
        report,
        "mean,,,{:.6},{:.6},{:.6},{rt_mean}",
        summary.parse_rate, summary.f1.0, summary.accuracy.0
    );
    let _ = writeln!(report, "std,,,,{:.6},{:.6},{rt_std}", summary.f1.1, summary.accuracy.1);
    ensure_output_dir(cfg)?;
    write(&cfg.out(REPORT_FILE), &report)?;
    Ok(summary)
}
