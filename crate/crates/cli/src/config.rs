use std::path::{Path, PathBuf};

use nces_core::synth::Architecture;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a pipeline run depends on besides its input files. Defaults
/// follow the published hyper-parameters (Adam, lr 3e-4, d = 40, N = 256,
/// L = 32, m = 32, gradient clip 5, 500 epochs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kb_path: Option<PathBuf>,
    pub seed: u64,
    /// Embedding dimension `d`.
    pub dim: usize,
    /// Output length `L`.
    pub length: usize,
    /// Examples per learning problem; `min(|individuals| / 2, 1000)` if unset.
    pub examples: Option<usize>,
    pub inducing_points: usize,
    pub heads: usize,
    pub hidden_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    /// Stop training early once an epoch reaches this hard accuracy.
    pub stop_at_hard_accuracy: Option<f64>,
    pub architectures: Vec<Architecture>,
    /// Models averaged by `synthesize`; falls back to `architectures`.
    pub ensemble: Vec<Architecture>,
    /// Fraction of problems kept for training.
    pub split_ratio: f64,
    pub output_dir: PathBuf,
    /// Expressions requested from the generator before filtering.
    pub num_expressions: usize,
    /// Longest generated expression in tokens; `length` if unset.
    pub max_expression_length: Option<usize>,
    pub transe_epochs: usize,
    pub transe_lr: f64,
    pub transe_margin: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kb_path: None,
            seed: 0,
            dim: 40,
            length: 32,
            examples: None,
            inducing_points: 32,
            heads: 4,
            hidden_width: 256,
            epochs: 500,
            batch_size: 256,
            lr: 3e-4,
            clip: 5.0,
            stop_at_hard_accuracy: None,
            architectures: Architecture::ALL.to_vec(),
            ensemble: Vec::new(),
            split_ratio: 0.9,
            output_dir: PathBuf::from("out"),
            num_expressions: 1000,
            max_expression_length: None,
            transe_epochs: 100,
            transe_lr: 0.01,
            transe_margin: 1.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let counts = [
            ("dim", self.dim),
            ("length", self.length),
            ("inducing_points", self.inducing_points),
            ("heads", self.heads),
            ("hidden_width", self.hidden_width),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("num_expressions", self.num_expressions),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CliError::Usage(format!("{name} must be positive")));
            }
        }
        if self.examples == Some(0) || self.max_expression_length == Some(0) {
            return Err(CliError::Usage("examples and max_expression_length must be positive".into()));
        }
        for (name, v) in [("lr", self.lr), ("clip", self.clip), ("transe_lr", self.transe_lr), ("transe_margin", self.transe_margin)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::Usage(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(CliError::Usage(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio)));
        }
        if self.architectures.is_empty() {
            return Err(CliError::Usage("at least one architecture is required".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(CliError::Usage(format!("heads ({}) must divide dim ({})", self.heads, self.dim)));
        }
        if self.max_expression_length.is_some_and(|m| m > self.length) {
            return Err(CliError::Usage("max_expression_length cannot exceed length".into()));
        }
        Ok(())
    }

    pub fn kb_path(&self) -> Result<&Path, CliError> {
        self.kb_path
            .as_deref()
            .ok_or_else(|| CliError::Usage("no knowledge base given (--kb or kb_path)".into()))
    }

    pub fn synthesis_members(&self) -> &[Architecture] {
        if self.ensemble.is_empty() {
            &self.architectures
        } else {
            &self.ensemble
        }
    }

    pub fn out(&self, file: &str) -> PathBuf {
        self.output_dir.join(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_a_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg = RunConfig::from_toml("epochs = 7\narchitectures = [\"st\"]\n").unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.architectures, vec![Architecture::SetTransformer]);
        assert_eq!(cfg.dim, 40);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        assert!(matches!(RunConfig::from_toml("epoch = 3"), Err(CliError::Usage(_))));
        let cfg = RunConfig { batch_size: 0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(CliError::Usage(_))));
        let cfg = RunConfig { architectures: vec![], ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig { split_ratio: 1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
