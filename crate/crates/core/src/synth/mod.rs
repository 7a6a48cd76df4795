//! The synthesizers: a Set Transformer and two recurrent models mapping a
//! pair of example sets to `C × L` token scores.

pub mod blocks;
mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Graph, ParamId, ParamStore, Tensor, Var};

use blocks::{BatchNorm, Cell, GruCell, Isab, Linear, LstmCell, Pma};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use train::{
    prepare_examples, score_batch, train, EpochMetrics, TrainConfig, TrainingExample,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "lstm")]
    Lstm,
    #[serde(rename = "gru")]
    Gru,
    #[serde(rename = "st")]
    SetTransformer,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Lstm, Architecture::Gru, Architecture::SetTransformer];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Lstm => "lstm",
            Architecture::Gru => "gru",
            Architecture::SetTransformer => "st",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture `{s}` (expected lstm, gru or st)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Width of the example embeddings and of the attention blocks.
    pub dim: usize,
    /// Output length `L`.
    pub length: usize,
    /// Number of token classes `C`, vocabulary plus PAD.
    pub num_tokens: usize,
    pub heads: usize,
    pub inducing_points: usize,
    pub seeds: usize,
    /// Recurrent width `H`, also used for the hidden layers of the head.
    pub hidden: usize,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, dim: usize, length: usize, num_tokens: usize) -> Self {
        ModelConfig {
            architecture,
            dim,
            length,
            num_tokens,
            heads: 4,
            inducing_points: 32,
            seeds: 1,
            hidden: 256,
        }
    }

    pub fn output_width(&self) -> usize {
        self.num_tokens * self.length
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("dim", self.dim),
            ("length", self.length),
            ("num_tokens", self.num_tokens),
            ("heads", self.heads),
            ("inducing_points", self.inducing_points),
            ("seeds", self.seeds),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("model field `{name}` must be positive")));
        }
        if self.architecture == Architecture::SetTransformer && !self.dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "{} heads do not divide model width {}",
                self.heads, self.dim
            )));
        }
        Ok(())
    }
}

/// Positive and negative example embeddings of one problem, one row each.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleSet {
    pub positives: Tensor,
    pub negatives: Tensor,
}

#[derive(Clone, Debug)]
enum Net {
    SetTransformer {
        /// Learned rows added to every positive (resp. negative) input row, so
        /// the decoder can tell the two sets apart after concatenation.
        tags: [ParamId; 2],
        encoder: Vec<Isab>,
        pool: Pma,
        out: Linear,
    },
    Recurrent {
        layers: Vec<Cell>,
        fc1: Linear,
        fc2: Linear,
        bn: BatchNorm,
        fc3: Linear,
    },
}

/// Output of a forward pass: `N × (C·L)` scores, each row a row-major `C × L`.
#[derive(Debug)]
pub struct Forward {
    pub scores: Var,
    bn_stats: Option<(BatchStats, usize)>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub params: ParamStore,
    net: Net,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = &config;
        let net = match c.architecture {
            Architecture::SetTransformer => {
                let bound = 1.0 / (c.dim as f64).sqrt();
                let tags = ["enc.pos_tag", "enc.neg_tag"]
                    .map(|name| params.add(name, blocks::uniform(&mut rng, 1, c.dim, bound), true));
                let encoder = (0..2)
                    .map(|i| Isab::new(&mut params, &format!("enc{i}"), c.dim, c.heads, c.inducing_points, &mut rng))
                    .collect::<Result<_>>()?;
                let pool = Pma::new(&mut params, "dec.pma", c.dim, c.heads, c.seeds, &mut rng)?;
                let out = Linear::new(&mut params, "dec.out", c.seeds * c.dim, c.output_width(), true, &mut rng);
                Net::SetTransformer {
                    tags,
                    encoder,
                    pool,
                    out,
                }
            }
            Architecture::Lstm | Architecture::Gru => {
                let layers = (0..2)
                    .map(|i| {
                        let inputs = if i == 0 { c.dim } else { c.hidden };
                        let name = format!("rnn{i}");
                        if c.architecture == Architecture::Lstm {
                            Cell::Lstm(LstmCell::new(&mut params, &name, inputs, c.hidden, &mut rng))
                        } else {
                            Cell::Gru(GruCell::new(&mut params, &name, inputs, c.hidden, &mut rng))
                        }
                    })
                    .collect();
                let fc1 = Linear::new(&mut params, "head.fc1", 2 * c.hidden, c.hidden, true, &mut rng);
                let fc2 = Linear::new(&mut params, "head.fc2", c.hidden, c.hidden, true, &mut rng);
                let bn = BatchNorm::new(&mut params, "head.bn", c.hidden);
                let fc3 = Linear::new(&mut params, "head.fc3", c.hidden, c.output_width(), true, &mut rng);
                Net::Recurrent {
                    layers,
                    fc1,
                    fc2,
                    bn,
                    fc3,
                }
            }
        };
        Ok(Model { config, params, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_inputs(&self, batch: &[ExampleSet]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for ex in batch {
            for t in [&ex.positives, &ex.negatives] {
                if t.cols() != self.config.dim {
                    return Err(Error::shape("model input", &[t.rows(), self.config.dim], &t.shape()));
                }
                if t.rows() == 0 {
                    return Err(Error::Data("example set is empty".into()));
                }
            }
        }
        Ok(())
    }

    /// Scores for a batch. Batch norm uses batch statistics when `training`.
    pub fn forward(&self, g: &mut Graph, batch: &[ExampleSet], training: bool) -> Result<Forward> {
        self.check_inputs(batch)?;
        let store = &self.params;
        match &self.net {
            Net::SetTransformer {
                tags,
                encoder,
                pool,
                out,
            } => {
                let mut rows = Vec::with_capacity(batch.len());
                for ex in batch {
                    let enc = |x: &Tensor, tag: ParamId, g: &mut Graph| -> Result<Var> {
                        let x = g.input(x.clone());
                        let tag = g.param(store, tag);
                        let mut h = g.add_row(x, tag)?;
                        for block in encoder {
                            h = block.forward(g, store, h)?;
                        }
                        Ok(h)
                    };
                    let pos = enc(&ex.positives, tags[0], g)?;
                    let neg = enc(&ex.negatives, tags[1], g)?;
                    let both = g.concat_rows(&[pos, neg])?;
                    let pooled = pool.forward(g, store, both)?;
                    let flat = g.reshape(pooled, 1, self.config.seeds * self.config.dim)?;
                    rows.push(out.forward(g, store, flat)?);
                }
                let scores = g.concat_rows(&rows)?;
                Ok(Forward { scores, bn_stats: None })
            }
            Net::Recurrent {
                layers,
                fc1,
                fc2,
                bn,
                fc3,
            } => {
                let mut rows = Vec::with_capacity(batch.len());
                for ex in batch {
                    let hp = self.summed_states(g, layers, &ex.positives)?;
                    let hn = self.summed_states(g, layers, &ex.negatives)?;
                    rows.push(g.concat_cols(&[hp, hn])?);
                }
                let h = g.concat_rows(&rows)?;
                let z = fc1.forward(g, store, h)?;
                let z = g.relu(z);
                let z = fc2.forward(g, store, z)?;
                let (z, stats) = bn.forward(g, store, z, training)?;
                let scores = fc3.forward(g, store, z)?;
                Ok(Forward {
                    scores,
                    bn_stats: stats.map(|s| (s, batch.len())),
                })
            }
        }
    }

    /// Runs the stacked cells over the rows of `seq` and sums the top layer's
    /// hidden states over time.
    fn summed_states(&self, g: &mut Graph, layers: &[Cell], seq: &Tensor) -> Result<Var> {
        let store = &self.params;
        let mut states: Vec<_> = layers.iter().map(|c| c.zero_state(g, 1)).collect();
        let mut tops = Vec::with_capacity(seq.rows());
        for t in 0..seq.rows() {
            let mut x = g.input(Tensor::from_vec(1, seq.cols(), seq.row(t).to_vec())?);
            for (cell, state) in layers.iter().zip(states.iter_mut()) {
                *state = cell.step(g, store, x, *state)?;
                x = state.h;
            }
            tops.push(x);
        }
        let stacked = g.concat_rows(&tops)?;
        Ok(g.sum_rows(stacked))
    }

    /// Folds the batch statistics of a training forward pass into the running
    /// batch-norm estimates.
    pub fn commit(&mut self, forward: &Forward) {
        if let (Net::Recurrent { bn, .. }, Some((stats, rows))) = (&self.net, &forward.bn_stats) {
            bn.update_running(&mut self.params, stats, *rows);
        }
    }

    /// Inference-mode scores, one `C × L` matrix per problem.
    pub fn predict(&self, batch: &[ExampleSet]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, batch, false)?;
        let scores = g.value(fwd.scores);
        (0..scores.rows())
            .map(|i| Tensor::from_vec(self.config.num_tokens, self.config.length, scores.row(i).to_vec()))
            .collect()
    }
}
