//! Run configuration: a single TOML file with flat sections, CLI overrides
//! on top, defaults underneath. Unknown keys are rejected. The resolved
//! configuration (minus the output path) is hashed, and every artifact
//! carries the hash.

use std::path::{Path, PathBuf};

use readability_core::corpus::Tokenizer;
use readability_core::encoder::{ContextMode, EncoderConfig};
use readability_core::train::{TrainConfig, TsaSchedule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub resources: Option<PathBuf>,
    pub sentence_corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub delimiters: String,
    pub tokenizer: Tokenizer,
    pub min_freq: usize,
    pub split_ratio: f64,
    pub n_max: usize,
    pub m_max: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            delimiters: readability_core::corpus::DEFAULT_DELIMITERS.to_string(),
            tokenizer: Tokenizer::Auto,
            min_freq: 1,
            split_ratio: 0.8,
            n_max: 50,
            m_max: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub d_embed: usize,
    pub d_hidden: usize,
    pub kernels: usize,
    pub window: usize,
    pub heads: usize,
    pub n_layers: usize,
    pub context: ContextMode,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            d_embed: 400,
            d_hidden: 200,
            kernels: 200,
            window: 3,
            heads: 8,
            n_layers: 2,
            context: ContextMode::Multi,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tsa: TsaSchedule,
    pub beta: f64,
    pub tau: f64,
    pub min_confidence: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lambda: 1.0,
            lr: 1e-3,
            weight_decay: 5e-4,
            epochs: 30,
            batch_size: 16,
            tsa: TsaSchedule::Linear,
            beta: 0.45,
            tau: 0.85,
            min_confidence: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DsdrSection {
    pub d_embed: usize,
    pub d_hidden: usize,
    pub m_lvl: usize,
    pub context_layers: usize,
    pub context_heads: usize,
    pub d_ff: usize,
    pub finetune_eptm: bool,
    pub eptm_epochs: usize,
    pub eptm_batch: usize,
    pub eptm_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for DsdrSection {
    fn default() -> Self {
        DsdrSection {
            d_embed: 64,
            d_hidden: 32,
            m_lvl: 0,
            context_layers: 1,
            context_heads: 2,
            d_ff: 128,
            finetune_eptm: false,
            eptm_epochs: 10,
            eptm_batch: 32,
            eptm_lr: 1e-2,
            epochs: 15,
            batch_size: 16,
            lr: 1e-2,
            weight_decay: 5e-4,
        }
    }
}

/// Which document-vector backbone the ranking/ordinal heads sit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    #[default]
    Dsdr,
    Hhnn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankingSection {
    /// Reference subsets per inference.
    pub p: usize,
    pub backbone: Backbone,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for RankingSection {
    fn default() -> Self {
        RankingSection {
            p: 10,
            backbone: Backbone::Dsdr,
            epochs: 40,
            lr: 2e-2,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrdinalSection {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for OrdinalSection {
    fn default() -> Self {
        OrdinalSection {
            epochs: 60,
            lr: 5e-2,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    #[default]
    #[clap(name = "cls")]
    #[serde(rename = "cls")]
    Classification,
    Ordinal,
    Ranking,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub head: Head,
}

/// The resolved run configuration.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub corpus: CorpusSection,
    pub encoder: EncoderSection,
    pub train: TrainSection,
    pub dsdr: DsdrSection,
    pub ranking: RankingSection,
    pub ordinal: OrdinalSection,
    pub eval: EvalSection,
}

/// CLI-level overrides, applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub head: Option<Head>,
    pub preset: Option<String>,
    pub sentence_corpus: Option<PathBuf>,
}

impl RunConfig {
    /// Load from an optional file and apply overrides
    /// (CLI > file > defaults).
    pub fn resolve(file: Option<&Path>, over: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(path) => {
                if !path.exists() {
                    return Err(CliError::Config(format!(
                        "config file not found: {}",
                        path.display()
                    )));
                }
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read config: {e}")))?;
                toml::from_str::<RunConfig>(&text)
                    .map_err(|e| CliError::Config(format!("invalid config: {e}")))?
            }
            None => RunConfig::default(),
        };
        if let Some(preset) = &over.preset {
            match preset.as_str() {
                "cmer" => {
                    cfg.encoder.d_embed = 512;
                    cfg.encoder.d_hidden = 256;
                    cfg.encoder.kernels = 256;
                    cfg.encoder.heads = 16;
                }
                other => {
                    return Err(CliError::Config(format!("unknown preset: {other}")));
                }
            }
        }
        if let Some(seed) = over.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &over.out {
            cfg.paths.out = Some(out.clone());
        }
        if let Some(head) = over.head {
            cfg.eval.head = head;
        }
        if let Some(sc) = &over.sentence_corpus {
            cfg.paths.sentence_corpus = Some(sc.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.corpus.delimiters.is_empty() {
            return Err(CliError::Config("delimiter set must not be empty".into()));
        }
        if !(0.0 < self.corpus.split_ratio && self.corpus.split_ratio < 1.0) {
            return Err(CliError::Config(format!(
                "split_ratio must be in (0, 1), got {}",
                self.corpus.split_ratio
            )));
        }
        if self.ranking.p == 0 {
            return Err(CliError::Config("ranking.p must be at least 1".into()));
        }
        Ok(())
    }

    /// Encoder configuration for a corpus with `y` levels.
    pub fn encoder_config(&self, y: usize) -> EncoderConfig {
        EncoderConfig {
            d_embed: self.encoder.d_embed,
            d_hidden: self.encoder.d_hidden,
            kernels: self.encoder.kernels,
            window: self.encoder.window,
            heads: self.encoder.heads,
            n_layers: self.encoder.n_layers,
            y,
            n_max: self.corpus.n_max,
            m_max: self.corpus.m_max,
            context_mode: self.encoder.context,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.train.lambda,
            lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            tsa_schedule: self.train.tsa,
            beta: self.train.beta,
            tau: self.train.tau,
            min_confidence: self.train.min_confidence,
            seed: self.seed,
        }
    }

    pub fn dsdr_config(&self) -> readability_core::dsdr::DsdrConfig {
        readability_core::dsdr::DsdrConfig {
            d_embed: self.dsdr.d_embed,
            d_hidden: self.dsdr.d_hidden,
            m_lvl: self.dsdr.m_lvl,
            context_layers: self.dsdr.context_layers,
            context_heads: self.dsdr.context_heads,
            d_ff: self.dsdr.d_ff,
            finetune_eptm: self.dsdr.finetune_eptm,
            eptm_epochs: self.dsdr.eptm_epochs,
            eptm_batch: self.dsdr.eptm_batch,
            eptm_lr: self.dsdr.eptm_lr,
            epochs: self.dsdr.epochs,
            batch_size: self.dsdr.batch_size,
            lr: self.dsdr.lr,
            weight_decay: self.dsdr.weight_decay,
            n_max: self.corpus.n_max,
            m_max: self.corpus.m_max,
            seed: self.seed,
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Hash of the resolved configuration, excluding the output location.
    pub fn hash(&self) -> String {
        let mut stripped = self.clone();
        stripped.paths.out = None;
        let canonical = serde_json::to_string(&stripped).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The resolved configuration as a JSON value, for embedding in
    /// checkpoints.
    pub fn as_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.encoder.d_embed, 400);
        assert_eq!(cfg.encoder.d_hidden, 200);
        assert_eq!(cfg.encoder.kernels, 200);
        assert_eq!(cfg.encoder.heads, 8);
        assert_eq!(cfg.encoder.window, 3);
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.train.weight_decay, 5e-4);
        assert_eq!(cfg.train.epochs, 30);
        assert_eq!(cfg.train.beta, 0.45);
        assert_eq!(cfg.train.tau, 0.85);
        assert_eq!(cfg.corpus.n_max, 50);
        assert_eq!(cfg.corpus.m_max, 50);
    }

    #[test]
    fn cmer_preset_applies_wider_model() {
        let over = Overrides {
            preset: Some("cmer".into()),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(None, &over).unwrap();
        assert_eq!(cfg.encoder.d_embed, 512);
        assert_eq!(cfg.encoder.d_hidden, 256);
        assert_eq!(cfg.encoder.kernels, 256);
        assert_eq!(cfg.encoder.heads, 16);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[train]\nlr = 0.1\nmystery_knob = 3\n").unwrap();
        let err = RunConfig::resolve(Some(&path), &Overrides::default());
        assert!(matches!(err, Err(CliError::Config(_))));
    }

    #[test]
    fn cli_overrides_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 5\n[eval]\nhead = \"ordinal\"\n").unwrap();
        let over = Overrides {
            seed: Some(9),
            head: Some(Head::Ranking),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(Some(&path), &over).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.eval.head, Head::Ranking);
    }

    #[test]
    fn hash_ignores_out_dir_only() {
        let mut a = RunConfig::default();
        let mut b = RunConfig::default();
        a.paths.out = Some(PathBuf::from("run-a"));
        b.paths.out = Some(PathBuf::from("run-b"));
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
