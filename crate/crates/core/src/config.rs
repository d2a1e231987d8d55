//! Flat `key=value` run configuration with dotted namespaces
//! (`train.learning_rate=1e-3`). Blank lines and `#` comments are
//! allowed; unknown keys are rejected; every component invariant is
//! checked before a config is handed to a command.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::fewshot::{EmbeddingStrategy, EvalConfig};
use crate::mel::FrontendConfig;
use crate::nn::{Activation, ConvStage, EncoderConfig};
use crate::objectives::{Objective, ObjectiveConfig};
use crate::trainer::{Selection, TrainConfig};
use crate::window::ScoreSource;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}: expected key=value, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("config line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: invalid value for {key}: {value:?}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("missing required key {0}")]
    MissingKey(&'static str),
    #[error("invalid config: {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

/// Everything a run needs. `objective` stays optional at parse time;
/// commands that train demand it via [`RunConfig::train_config`].
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub frontend: FrontendConfig,
    pub augment: AugmentConfig,
    pub objective_cfg: ObjectiveConfig<f32>,
    pub encoder: EncoderConfig,
    pub objective: Option<Objective>,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub train_seed: u64,
    pub selection: Selection,
    pub train_score_source: ScoreSource,
    pub eval: EvalConfig,
    pub manifest: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            frontend: FrontendConfig::default(),
            augment: AugmentConfig::default(),
            objective_cfg: ObjectiveConfig::default(),
            encoder: EncoderConfig::default(),
            objective: None,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 1e-6,
            epochs: 20,
            train_seed: 0,
            selection: Selection::TemporalProximity,
            train_score_source: ScoreSource::Energy,
            eval: EvalConfig::default(),
            manifest: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::BadLine {
                line,
                text: trimmed.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(
            key: &str,
            value: &str,
            line: usize,
        ) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        let bad = |key: &str, value: &str| ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        };
        match key {
            "data.manifest" => self.manifest = Some(PathBuf::from(value)),

            "frontend.sample_rate_hz" => self.frontend.sample_rate_hz = parse(key, value, line)?,
            "frontend.n_fft" => self.frontend.n_fft = parse(key, value, line)?,
            "frontend.hop" => self.frontend.hop = parse(key, value, line)?,
            "frontend.n_mels" => self.frontend.n_mels = parse(key, value, line)?,
            "frontend.window_s" => self.frontend.window_s = parse(key, value, line)?,
            "frontend.log_epsilon" => self.frontend.log_epsilon = parse(key, value, line)?,

            "augment.mix_coeff_min" => self.augment.mix_coeff_min = parse(key, value, line)?,
            "augment.mix_coeff_max" => self.augment.mix_coeff_max = parse(key, value, line)?,
            "augment.sa_blocks" => self.augment.sa_blocks = parse(key, value, line)?,
            "augment.sa_freq_width" => self.augment.sa_freq_width = parse(key, value, line)?,
            "augment.sa_time_width" => self.augment.sa_time_width = parse(key, value, line)?,
            "augment.enable_time_shift" => {
                self.augment.enable_time_shift = parse(key, value, line)?
            }
            "augment.enable_mix" => self.augment.enable_mix = parse(key, value, line)?,
            "augment.enable_spec_augment" => {
                self.augment.enable_spec_augment = parse(key, value, line)?
            }

            "objective.temperature" => self.objective_cfg.temperature = parse(key, value, line)?,
            "objective.lambda" => self.objective_cfg.lambda = parse(key, value, line)?,
            "objective.robust_norm" => self.objective_cfg.robust_norm = parse(key, value, line)?,

            "encoder.conv_stages" => {
                let mut stages = Vec::new();
                for part in value.split(',').filter(|p| !p.is_empty()) {
                    let fields: Vec<&str> = part.split(':').collect();
                    if fields.len() != 3 {
                        return Err(bad(key, value));
                    }
                    stages.push(ConvStage {
                        out_channels: fields[0].parse().map_err(|_| bad(key, value))?,
                        kernel: fields[1].parse().map_err(|_| bad(key, value))?,
                        stride: fields[2].parse().map_err(|_| bad(key, value))?,
                    });
                }
                self.encoder.conv_stages = stages;
            }
            "encoder.embedding_dim" => self.encoder.embedding_dim = parse(key, value, line)?,
            "encoder.projector_dims" => {
                let mut dims = Vec::new();
                for part in value.split(',').filter(|p| !p.is_empty()) {
                    dims.push(part.parse().map_err(|_| bad(key, value))?);
                }
                self.encoder.projector_dims = dims;
            }
            "encoder.activation" => {
                self.encoder.activation = Activation::parse(value).ok_or_else(|| bad(key, value))?
            }

            "train.batch_size" => self.batch_size = parse(key, value, line)?,
            "train.learning_rate" => self.learning_rate = parse(key, value, line)?,
            "train.weight_decay" => self.weight_decay = parse(key, value, line)?,
            "train.epochs" => self.epochs = parse(key, value, line)?,
            "train.objective" => {
                self.objective = Some(Objective::parse(value).ok_or_else(|| bad(key, value))?)
            }
            "train.seed" => self.train_seed = parse(key, value, line)?,
            "train.selection" => {
                self.selection = Selection::parse(value).ok_or_else(|| bad(key, value))?
            }
            "train.score_source" => {
                self.train_score_source =
                    ScoreSource::parse(value).ok_or_else(|| bad(key, value))?
            }

            "eval.n_way" => self.eval.n_way = parse(key, value, line)?,
            "eval.k_shot" => self.eval.k_shot = parse(key, value, line)?,
            "eval.n_query" => self.eval.n_query = parse(key, value, line)?,
            "eval.n_tasks" => self.eval.n_tasks = parse(key, value, line)?,
            "eval.seed" => self.eval.seed = parse(key, value, line)?,
            "eval.strategy" => {
                self.eval.embedding_strategy =
                    EmbeddingStrategy::parse(value).ok_or_else(|| bad(key, value))?
            }
            "eval.score_source" => {
                self.eval.score_source = ScoreSource::parse(value).ok_or_else(|| bad(key, value))?
            }

            other => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: other.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Component invariants, reported with the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.frontend.validate().map_err(|e| ConfigError::Invalid {
            key: "frontend",
            reason: e.to_string(),
        })?;
        self.augment.validate().map_err(|reason| ConfigError::Invalid {
            key: "augment",
            reason,
        })?;
        self.encoder.validate().map_err(|e| ConfigError::Invalid {
            key: "encoder",
            reason: e.to_string(),
        })?;
        if !(self.objective_cfg.temperature > 0.0) {
            return Err(ConfigError::Invalid {
                key: "objective.temperature",
                reason: "must be > 0".into(),
            });
        }
        if self.objective_cfg.lambda < 0.0 {
            return Err(ConfigError::Invalid {
                key: "objective.lambda",
                reason: "must be >= 0".into(),
            });
        }
        if self.batch_size < 2 {
            return Err(ConfigError::Invalid {
                key: "train.batch_size",
                reason: "must be >= 2".into(),
            });
        }
        if !(self.learning_rate > 0.0) {
            return Err(ConfigError::Invalid {
                key: "train.learning_rate",
                reason: "must be > 0".into(),
            });
        }
        if self.epochs == 0 {
            return Err(ConfigError::Invalid {
                key: "train.epochs",
                reason: "must be >= 1".into(),
            });
        }
        self.eval.validate().map_err(|e| ConfigError::Invalid {
            key: "eval",
            reason: e.to_string(),
        })?;
        Ok(())
    }

    /// The training slice of the config; `train.objective` is required.
    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let objective = self.objective.ok_or(ConfigError::MissingKey("train.objective"))?;
        Ok(TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            objective,
            objective_cfg: self.objective_cfg,
            seed: self.train_seed,
            selection: self.selection,
            score_source: self.train_score_source,
        })
    }

    pub fn require_manifest(&self) -> Result<&Path, ConfigError> {
        self.manifest
            .as_deref()
            .ok_or(ConfigError::MissingKey("data.manifest"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = RunConfig::from_text("").unwrap();
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.epochs, 20);
        assert_eq!(cfg.eval.n_way, 5);
        assert!(cfg.objective.is_none());
    }

    #[test]
    fn full_round_parse() {
        let text = "\
# desk run
data.manifest=data/manifest.csv
train.objective=bt
train.batch_size=32
train.learning_rate=5e-4
train.epochs=3
train.seed=11
train.selection=activation
train.score_source=external
objective.lambda=0.05
eval.n_tasks=100
eval.strategy=activation_select
encoder.conv_stages=8:3:2,16:3:2
encoder.projector_dims=16,16
encoder.embedding_dim=16
augment.sa_blocks=2
frontend.n_mels=64
";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.objective, Some(Objective::BarlowTwins));
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.train_seed, 11);
        assert_eq!(cfg.selection, Selection::Activation);
        assert_eq!(cfg.train_score_source, ScoreSource::External);
        assert_eq!(cfg.encoder.conv_stages.len(), 2);
        assert_eq!(cfg.encoder.embedding_dim, 16);
        assert_eq!(cfg.eval.n_tasks, 100);
        assert_eq!(
            cfg.eval.embedding_strategy,
            EmbeddingStrategy::ActivationSelect
        );
        assert_eq!(cfg.frontend.n_mels, 64);
        assert!((cfg.objective_cfg.lambda - 0.05).abs() < 1e-9);
        assert_eq!(
            cfg.require_manifest().unwrap(),
            Path::new("data/manifest.csv")
        );
        assert!(cfg.train_config().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        match RunConfig::from_text("train.warmup=5\n") {
            Err(ConfigError::UnknownKey { line: 1, key }) => assert_eq!(key, "train.warmup"),
            other => panic!("expected unknown key, got {other:?}"),
        }
    }

    #[test]
    fn bad_values_name_the_key() {
        match RunConfig::from_text("train.epochs=soon\n") {
            Err(ConfigError::BadValue { key, .. }) => assert_eq!(key, "train.epochs"),
            other => panic!("expected bad value, got {other:?}"),
        }
    }

    #[test]
    fn missing_objective_is_reported_by_train_config() {
        let cfg = RunConfig::from_text("train.epochs=1\n").unwrap();
        match cfg.train_config() {
            Err(ConfigError::MissingKey(key)) => assert_eq!(key, "train.objective"),
            other => panic!("expected missing key, got {other:?}"),
        }
    }

    #[test]
    fn invariants_are_validated() {
        assert!(matches!(
            RunConfig::from_text("train.batch_size=1\n"),
            Err(ConfigError::Invalid {
                key: "train.batch_size",
                ..
            })
        ));
        assert!(matches!(
            RunConfig::from_text("frontend.hop=2048\n"),
            Err(ConfigError::Invalid { key: "frontend", .. })
        ));
        assert!(matches!(
            RunConfig::from_text("eval.n_way=1\n"),
            Err(ConfigError::Invalid { key: "eval", .. })
        ));
    }
}
