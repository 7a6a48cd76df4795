//! The `nces` pipeline: generate, embed, train, synthesize, evaluate.
//!
//! Every command is a function of the run configuration, its input files and
//! the seed; `run` maps failures to exit codes (1 usage, 2 data, 3 numeric).

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nces_core::synth::Architecture;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] nces_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use nces_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::InvalidArgument(_)) => 1,
            CliError::Core(E::Numeric(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "nces",
    version,
    about = "Synthesize ALC class expressions from examples",
    args_override_self = true
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub kb: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub length: Option<usize>,
    #[arg(long, global = true)]
    pub examples: Option<usize>,
    #[arg(long, global = true)]
    pub inducing_points: Option<usize>,
    #[arg(long, global = true)]
    pub heads: Option<usize>,
    #[arg(long, global = true)]
    pub hidden_width: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub clip: Option<f64>,
    #[arg(long, global = true)]
    pub stop_at_hard_accuracy: Option<f64>,
    /// Comma-separated subset of lstm, gru, st.
    #[arg(long, global = true, value_delimiter = ',')]
    pub arch: Option<Vec<Architecture>>,
    /// Architectures whose checkpoints `synthesize` averages.
    #[arg(long, global = true, value_delimiter = ',')]
    pub ensemble: Option<Vec<Architecture>>,
    #[arg(long, global = true)]
    pub split_ratio: Option<f64>,
    #[arg(long, global = true)]
    pub num_expressions: Option<usize>,
    #[arg(long, global = true)]
    pub max_expression_length: Option<usize>,
    #[arg(long, global = true)]
    pub transe_epochs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        if self.kb.is_some() {
            cfg.kb_path = self.kb.clone();
        }
        set(&mut cfg.seed, &self.seed);
        set(&mut cfg.output_dir, &self.out_dir);
        set(&mut cfg.dim, &self.dim);
        set(&mut cfg.length, &self.length);
        if self.examples.is_some() {
            cfg.examples = self.examples;
        }
        set(&mut cfg.inducing_points, &self.inducing_points);
        set(&mut cfg.heads, &self.heads);
        set(&mut cfg.hidden_width, &self.hidden_width);
        set(&mut cfg.epochs, &self.epochs);
        set(&mut cfg.batch_size, &self.batch_size);
        set(&mut cfg.lr, &self.lr);
        set(&mut cfg.clip, &self.clip);
        if self.stop_at_hard_accuracy.is_some() {
            cfg.stop_at_hard_accuracy = self.stop_at_hard_accuracy;
        }
        set(&mut cfg.architectures, &self.arch);
        set(&mut cfg.ensemble, &self.ensemble);
        set(&mut cfg.split_ratio, &self.split_ratio);
        set(&mut cfg.num_expressions, &self.num_expressions);
        if self.max_expression_length.is_some() {
            cfg.max_expression_length = self.max_expression_length;
        }
        set(&mut cfg.transe_epochs, &self.transe_epochs);
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate learning problems and write train.tsv / test.tsv.
    Generate,
    /// Train TransE embeddings and write embeddings.txt.
    Embed,
    /// Train one model per architecture on the training problems.
    Train {
        /// Defaults to train.tsv in the output directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Synthesize an expression for every problem in a dataset file.
    Synthesize {
        /// Defaults to test.tsv in the output directory.
        #[arg(long)]
        problems: Option<PathBuf>,
    },
    /// Score predictions against their learning problems.
    Evaluate {
        #[arg(long)]
        problems: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// `runtimes.csv` from `synthesize`; fills the runtime column.
        #[arg(long)]
        runtimes: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
    /// Write a random knowledge base (names C0.., r0.., i0..) to stdout or a file.
    SyntheticKb {
        #[arg(long, default_value_t = 50)]
        individuals: usize,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 2)]
        roles: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Generate => {
            let s = commands::generate(&cfg)?;
            println!(
                "{} expressions kept of {} generated; {} train, {} test problems",
                s.kept, s.generated, s.train, s.test
            );
        }
        Command::Embed => {
            let s = commands::embed(&cfg)?;
            match (s.losses.first(), s.losses.last()) {
                (Some(first), Some(last)) => println!(
                    "{} triples, {} entities; loss {first:.4} -> {last:.4}",
                    s.triples, s.entities
                ),
                _ => println!("{} triples, {} entities; no training epochs", s.triples, s.entities),
            }
        }
        Command::Train { data } => {
            let path = data.clone().unwrap_or_else(|| cfg.out(commands::TRAIN_FILE));
            for (arch, history) in commands::train(&cfg, &path)? {
                let last = history.last().expect("at least one epoch");
                println!(
                    "{arch}: {} epochs, loss {:.4}, soft {:.4}, hard {:.4}",
                    history.len(),
                    last.loss,
                    last.soft_acc,
                    last.hard_acc
                );
            }
        }
        Command::Synthesize { problems } => {
            let path = problems.clone().unwrap_or_else(|| cfg.out(commands::TEST_FILE));
            let s = commands::synthesize(&cfg, &path)?;
            println!(
                "{} problems, {} parsed, {:.4} s per problem",
                s.problems, s.parsed, s.mean_seconds
            );
        }
        Command::Evaluate {
            problems,
            predictions,
            runtimes,
        } => {
            let problems = problems.clone().unwrap_or_else(|| cfg.out(commands::TEST_FILE));
            let predictions = predictions.clone().unwrap_or_else(|| cfg.out(commands::PREDICTIONS_FILE));
            let s = commands::evaluate(&cfg, &problems, &predictions, runtimes.as_deref())?;
            println!(
                "F1 {:.2} ± {:.2}  accuracy {:.2} ± {:.2}  parsed {:.2}%",
                100.0 * s.f1.0,
                100.0 * s.f1.1,
                100.0 * s.accuracy.0,
                100.0 * s.accuracy.1,
                100.0 * s.parse_rate
            );
            if let Some((mean, std)) = s.runtime {
                println!("runtime {mean:.4} ± {std:.4} s");
            }
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
        Command::SyntheticKb {
            individuals,
            classes,
            roles,
            output,
        } => {
            let text = nces_core::datagen::synthetic_kb(*individuals, *classes, *roles, cfg.seed).to_text();
            match output {
                Some(path) => std::fs::write(path, text).map_err(|e| nces_core::Error::io(path, e))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
