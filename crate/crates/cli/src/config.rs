//! Run configuration file. Keys follow the usual hyperparameter names
//! (`num_train_epochs`, `drop_out`, `dense_output_dimension`, ...).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use npdscan::baselines::LstmConfig;
use npdscan::checkpoint::{import_roberta_encoder, LoadedModel, ModelSpec};
use npdscan::encoder::{EncoderConfig, PoolingMode};
use npdscan::head::HeadConfig;
use npdscan::model::{DetectorConfig, VulnDetector};
use npdscan::nn::RngState;
use npdscan::tokenizer::{load_vocab, FallbackTokenizer, Tokenizer};
use npdscan::train_eval::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Transformer,
    Lstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    /// `tiny` or `codebert-base`.
    pub preset: String,
    pub transformer_layers: Option<usize>,
    /// Encoder dropout; the preset's value when absent.
    pub encoder_drop_out: Option<f64>,
    /// Tokens per function including bos/eos; defaults to the preset's
    /// position count (transformer) or `max_sequence_length` (LSTM).
    pub max_length: Option<usize>,
    pub num_train_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub drop_out: f64,
    pub dense_output_dimension: usize,
    pub pooling: PoolingMode,
    pub seed: u64,
    /// BPE vocabulary; the built-in word tokenizer is used when absent.
    pub vocab_file: Option<PathBuf>,
    pub merges_file: Option<PathBuf>,
    /// RoBERTa-layout safetensors to initialise the encoder from.
    pub pretrained_weights: Option<PathBuf>,
    pub max_vocab_size: usize,
    pub max_sequence_length: usize,
    pub embedding_dim: usize,
    pub units: Vec<usize>,
    pub lstm_dense_dimension: usize,
    /// Single-threaded evaluation.
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let h = HeadConfig::new(1);
        let l = LstmConfig::default();
        Self {
            model: ModelKind::Transformer,
            preset: "tiny".into(),
            transformer_layers: None,
            encoder_drop_out: None,
            max_length: None,
            num_train_epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            drop_out: h.dropout_p,
            dense_output_dimension: h.dense_dim,
            pooling: t.pooling,
            seed: t.seed,
            vocab_file: None,
            merges_file: None,
            pretrained_weights: None,
            max_vocab_size: l.max_vocab_size,
            max_sequence_length: l.max_sequence_length,
            embedding_dim: l.embedding_dim,
            units: l.units,
            lstm_dense_dimension: l.dense_dim,
            deterministic: false,
        }
    }
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.vocab_file.is_some() != self.merges_file.is_some() {
            bail!("vocab_file and merges_file must be given together");
        }
        if self.model == ModelKind::Lstm && self.pretrained_weights.is_some() {
            bail!("pretrained_weights only applies to the transformer");
        }
        self.model_spec()?;
        let len = self.max_length();
        if len < 2 {
            bail!("max_length {len} leaves no room for bos and eos");
        }
        if self.model == ModelKind::Transformer {
            let positions = self.encoder_config()?.max_positions;
            if len > positions {
                bail!("max_length {len} exceeds the encoder's {positions} positions");
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            epochs: self.num_train_epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            pooling: self.pooling,
            deterministic: self.deterministic,
        }
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        let mut e = EncoderConfig::preset(&self.preset)
            .with_context(|| format!("unknown preset {:?} (expected tiny or codebert-base)", self.preset))?;
        if let Some(n) = self.transformer_layers {
            e.num_layers = n;
        }
        if let Some(p) = self.encoder_drop_out {
            e.dropout_p = p;
        }
        Ok(e)
    }

    pub fn lstm_config(&self) -> LstmConfig {
        LstmConfig {
            max_vocab_size: self.max_vocab_size,
            max_sequence_length: self.max_sequence_length,
            embedding_dim: self.embedding_dim,
            units: self.units.clone(),
            dense_dim: self.lstm_dense_dimension,
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        Ok(match self.model {
            ModelKind::Transformer => {
                let encoder = self.encoder_config()?;
                let mut config = DetectorConfig::new(encoder, self.pooling);
                config.head.dropout_p = self.drop_out;
                config.head.dense_dim = self.dense_output_dimension;
                config.validate()?;
                ModelSpec::Transformer { config }
            }
            ModelKind::Lstm => {
                let config = self.lstm_config();
                config.validate()?;
                ModelSpec::Lstm { config }
            }
        })
    }

    pub fn max_length(&self) -> usize {
        self.max_length.unwrap_or(match self.model {
            ModelKind::Transformer => self.encoder_config().map_or(2, |e| e.max_positions),
            ModelKind::Lstm => self.max_sequence_length,
        })
    }

    pub fn tokenizer(&self) -> Result<Tokenizer> {
        if let (Some(v), Some(m)) = (&self.vocab_file, &self.merges_file) {
            return Ok(Tokenizer::Bpe(load_vocab(v, m)?));
        }
        let size = match self.model {
            ModelKind::Transformer => self.encoder_config()?.vocab_size,
            ModelKind::Lstm => self.max_vocab_size,
        };
        Ok(Tokenizer::Fallback(FallbackTokenizer::c_default(size)?))
    }

    /// A freshly initialised model (plus imported encoder weights when
    /// configured).
    pub fn build_model(&self, seed: u64) -> Result<LoadedModel> {
        let spec = self.model_spec()?;
        let mut model = LoadedModel::init(&spec, &mut RngState::new(seed))?;
        if let (Some(path), LoadedModel::Transformer(m)) = (&self.pretrained_weights, &mut model) {
            m.encoder = import_roberta_encoder(path, m.encoder.config.clone())?;
        }
        Ok(model)
    }

    pub fn build_detector(&self, seed: u64) -> Result<VulnDetector<f32>> {
        match self.build_model(seed)? {
            LoadedModel::Transformer(m) => Ok(m),
            LoadedModel::Lstm(_) => bail!("not a transformer config"),
        }
    }
}
