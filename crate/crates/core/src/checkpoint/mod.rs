//! On-disk model format: a directory holding `manifest.json` and
//! `weights.bin`, the latter being every parameter as little-endian f32 in
//! visit order.
//!
//! Loading checks the whole tensor index before any model is returned, so a
//! damaged checkpoint never yields a half-filled model.

mod safetensors;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use safetensors::{import_roberta_encoder, read_safetensors, roberta_name, SafeTensor};

use crate::baselines::{LstmCache, LstmClassifier, LstmConfig};
use crate::error::{CheckpointError, ModelError};
use crate::model::{Classifier, DetectorCache, DetectorConfig, VulnDetector};
use crate::nn::{Mode, Parameter, Parameters, RngState};
use crate::tensor::Tensor;
use crate::tokenizer::{load_vocab, BpeVocab, FallbackTokenizer, TokenizedSample, Tokenizer};
use crate::train_eval::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "npdscan-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const VOCAB_FILE: &str = "vocab.json";
const MERGES_FILE: &str = "merges.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Transformer { config: DetectorConfig },
    Lstm { config: LstmConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenizerSpec {
    Fallback { tokenizer: FallbackTokenizer },
    /// Vocabulary files stored next to the manifest.
    Bpe { vocab: String, merges: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub seed: u64,
    /// Epoch that produced the weights; `None` for untrained or imported ones.
    pub epoch: Option<usize>,
    pub dataset_manifest_sha256: Option<String>,
    pub train_config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub format_version: u32,
    pub model: ModelSpec,
    pub tokenizer: TokenizerSpec,
    pub max_length: usize,
    pub tensors: Vec<TensorEntry>,
    pub provenance: TrainingProvenance,
    pub created_at: String,
}

impl CheckpointManifest {
    pub fn read(dir: &Path) -> Result<Self, CheckpointError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| CheckpointError::Io { path, source })?;
        // Check the version before the full schema so that a future layout
        // reports a version error instead of a parse error.
        let raw: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        match raw.get("format").and_then(|v| v.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            other => return Err(CheckpointError::Manifest(format!("unknown format {other:?}"))),
        }
        let found = raw
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| CheckpointError::Manifest("format_version missing".into()))?;
        if found != CHECKPOINT_VERSION as u64 {
            return Err(CheckpointError::Version {
                found: found.min(u32::MAX as u64) as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        serde_json::from_value(raw).map_err(|e| CheckpointError::Manifest(e.to_string()))
    }
}

/// A model of either family behind one [`Classifier`].
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Transformer(VulnDetector<f32>),
    Lstm(LstmClassifier<f32>),
}

#[derive(Debug, Clone)]
pub enum LoadedCache {
    Transformer(DetectorCache<f32>),
    Lstm(LstmCache<f32>),
}

impl LoadedModel {
    pub fn init(spec: &ModelSpec, rng: &mut RngState) -> Result<Self, ModelError> {
        Ok(match spec {
            ModelSpec::Transformer { config } => Self::Transformer(VulnDetector::init(config, rng)?),
            ModelSpec::Lstm { config } => Self::Lstm(LstmClassifier::init(config.clone(), rng)?),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Self::Transformer(m) => ModelSpec::Transformer { config: m.config() },
            Self::Lstm(m) => ModelSpec::Lstm {
                config: m.config.clone(),
            },
        }
    }

    /// Largest token id the model accepts, plus one.
    pub fn vocab_size(&self) -> usize {
        match self {
            Self::Transformer(m) => m.encoder.config.vocab_size,
            Self::Lstm(m) => m.config.max_vocab_size,
        }
    }
}

impl Parameters<f32> for LoadedModel {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<f32>)) {
        match self {
            Self::Transformer(m) => m.visit_params(f),
            Self::Lstm(m) => m.visit_params(f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f32>)) {
        match self {
            Self::Transformer(m) => m.visit_params_mut(f),
            Self::Lstm(m) => m.visit_params_mut(f),
        }
    }
}

impl Classifier<f32> for LoadedModel {
    type Cache = LoadedCache;

    fn forward(
        &self,
        sample: &TokenizedSample,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<([f32; 2], LoadedCache), ModelError> {
        match self {
            Self::Transformer(m) => m.forward(sample, mode, rng).map(|(l, c)| (l, LoadedCache::Transformer(c))),
            Self::Lstm(m) => m.forward(sample, mode, rng).map(|(l, c)| (l, LoadedCache::Lstm(c))),
        }
    }

    fn backward(&mut self, cache: &LoadedCache, d_logits: [f32; 2]) -> Result<(), ModelError> {
        match (self, cache) {
            (Self::Transformer(m), LoadedCache::Transformer(c)) => m.backward(c, d_logits),
            (Self::Lstm(m), LoadedCache::Lstm(c)) => m.backward(c, d_logits),
            _ => Err(ModelError::Config("cache belongs to a different model family".into())),
        }
    }
}

/// Everything needed to score source text.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: LoadedModel,
    pub tokenizer: Tokenizer,
    pub max_length: usize,
    pub provenance: TrainingProvenance,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_bpe(dir: &Path, vocab: &BpeVocab) -> Result<TokenizerSpec, CheckpointError> {
    let map: serde_json::Map<String, serde_json::Value> =
        vocab.entries().into_iter().map(|(t, i)| (t, i.into())).collect();
    let vocab_path = dir.join(VOCAB_FILE);
    let text = serde_json::to_string(&map).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    fs::write(&vocab_path, text).map_err(io_err(&vocab_path))?;
    let mut merges = String::from("#version: 0.2\n");
    for (a, b) in vocab.merges() {
        merges.push_str(a);
        merges.push(' ');
        merges.push_str(b);
        merges.push('\n');
    }
    let merges_path = dir.join(MERGES_FILE);
    fs::write(&merges_path, merges).map_err(io_err(&merges_path))?;
    Ok(TokenizerSpec::Bpe {
        vocab: VOCAB_FILE.into(),
        merges: MERGES_FILE.into(),
    })
}

/// Writes `model` into `dir` (created if needed) and returns the manifest.
pub fn save_checkpoint(
    dir: &Path,
    model: &dyn Parameters<f32>,
    spec: ModelSpec,
    tokenizer: &Tokenizer,
    max_length: usize,
    provenance: TrainingProvenance,
) -> Result<CheckpointManifest, CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    model.visit_params(&mut |p| {
        let offset = blob.len() as u64;
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: p.name.clone(),
            dtype: "f32".into(),
            shape: p.shape().to_vec(),
            offset,
            length: blob.len() as u64 - offset,
        });
    });
    let tokenizer = match tokenizer {
        Tokenizer::Fallback(f) => TokenizerSpec::Fallback { tokenizer: f.clone() },
        Tokenizer::Bpe(v) => write_bpe(dir, v)?,
    };
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        format_version: CHECKPOINT_VERSION,
        model: spec,
        tokenizer,
        max_length,
        tensors,
        provenance,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    let weights = dir.join(WEIGHTS_FILE);
    fs::write(&weights, &blob).map_err(io_err(&weights))?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

/// Checks that the entries tile the blob exactly: no overlap, no gaps, no
/// trailing bytes, nothing past the end.
fn validate_index(tensors: &[TensorEntry], blob_len: u64) -> Result<(), CheckpointError> {
    let mut seen = BTreeMap::new();
    for t in tensors {
        if seen.insert(t.name.as_str(), ()).is_some() {
            return Err(CheckpointError::TensorIndex {
                name: t.name.clone(),
                msg: "listed more than once".into(),
            });
        }
        if t.dtype != "f32" {
            return Err(CheckpointError::TensorIndex {
                name: t.name.clone(),
                msg: format!("unsupported dtype {:?}", t.dtype),
            });
        }
        let elems: u64 = t.shape.iter().map(|&d| d as u64).product();
        if t.length != elems * 4 {
            return Err(CheckpointError::TensorIndex {
                name: t.name.clone(),
                msg: format!("length {} does not match shape {:?}", t.length, t.shape),
            });
        }
    }
    let needed = tensors
        .iter()
        .map(|t| t.offset.saturating_add(t.length))
        .max()
        .unwrap_or(0);
    if needed > blob_len {
        return Err(CheckpointError::Truncated {
            needed,
            actual: blob_len,
        });
    }
    let mut order: Vec<&TensorEntry> = tensors.iter().collect();
    order.sort_by_key(|t| t.offset);
    let mut cursor = 0u64;
    for t in order {
        let end = t.offset + t.length;
        if t.offset < cursor {
            return Err(CheckpointError::TensorIndex {
                name: t.name.clone(),
                msg: format!("offset {} overlaps the previous tensor ending at {cursor}", t.offset),
            });
        }
        if t.offset > cursor {
            return Err(CheckpointError::TensorIndex {
                name: t.name.clone(),
                msg: format!("gap of {} bytes before offset {}", t.offset - cursor, t.offset),
            });
        }
        cursor = end;
    }
    if cursor != blob_len {
        return Err(CheckpointError::TensorIndex {
            name: String::new(),
            msg: format!("{} trailing bytes after the last tensor", blob_len - cursor),
        });
    }
    Ok(())
}

/// Fills every parameter of `model` from the blob. Every model parameter
/// must be indexed with its exact shape and every index entry must be used.
fn fill_parameters(
    model: &mut dyn Parameters<f32>,
    tensors: &[TensorEntry],
    blob: &[u8],
) -> Result<(), CheckpointError> {
    let mut by_name: BTreeMap<&str, &TensorEntry> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut failure = None;
    model.visit_params_mut(&mut |p| {
        if failure.is_some() {
            return;
        }
        let Some(entry) = by_name.remove(p.name.as_str()) else {
            failure = Some(CheckpointError::MissingTensor(p.name.clone()));
            return;
        };
        if entry.shape != p.shape() {
            failure = Some(CheckpointError::TensorShape {
                name: p.name.clone(),
                expected: p.shape().to_vec(),
                found: entry.shape.clone(),
            });
            return;
        }
        let bytes = &blob[entry.offset as usize..(entry.offset + entry.length) as usize];
        for (dst, chunk) in p.value.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(name) = by_name.keys().next() {
        return Err(CheckpointError::UnexpectedTensor(name.to_string()));
    }
    Ok(())
}

fn load_tokenizer(dir: &Path, spec: &TokenizerSpec) -> Result<Tokenizer, CheckpointError> {
    Ok(match spec {
        TokenizerSpec::Fallback { tokenizer } => {
            // Rebuild so the dictionary is revalidated.
            Tokenizer::Fallback(FallbackTokenizer::new(
                tokenizer.vocab_size(),
                tokenizer.dictionary().clone(),
            )?)
        }
        TokenizerSpec::Bpe { vocab, merges } => {
            let inside = |name: &str| -> Result<PathBuf, CheckpointError> {
                let rel = Path::new(name);
                if rel.components().count() != 1 || rel.is_absolute() {
                    return Err(CheckpointError::Manifest(format!(
                        "tokenizer file {name:?} must be a plain file name"
                    )));
                }
                Ok(dir.join(rel))
            };
            Tokenizer::Bpe(load_vocab(&inside(vocab)?, &inside(merges)?)?)
        }
    })
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<CheckpointManifest, CheckpointError> {
        save_checkpoint(
            dir,
            &self.model,
            self.model.spec(),
            &self.tokenizer,
            self.max_length,
            self.provenance.clone(),
        )
    }

    pub fn load(dir: &Path) -> Result<(Self, CheckpointManifest), CheckpointError> {
        let manifest = CheckpointManifest::read(dir)?;
        let weights = dir.join(WEIGHTS_FILE);
        let blob = fs::read(&weights).map_err(io_err(&weights))?;
        validate_index(&manifest.tensors, blob.len() as u64)?;

        let mut model = LoadedModel::init(&manifest.model, &mut RngState::new(0))?;
        fill_parameters(&mut model, &manifest.tensors, &blob)?;

        let tokenizer = load_tokenizer(dir, &manifest.tokenizer)?;
        if tokenizer.vocab_size() > model.vocab_size() {
            return Err(CheckpointError::Manifest(format!(
                "tokenizer has {} ids but the model embeds only {}",
                tokenizer.vocab_size(),
                model.vocab_size()
            )));
        }
        if manifest.max_length < 2 {
            return Err(CheckpointError::Manifest(format!("max_length {}", manifest.max_length)));
        }
        if let ModelSpec::Transformer { config } = &manifest.model {
            if manifest.max_length > config.encoder.max_positions {
                return Err(CheckpointError::Manifest(format!(
                    "max_length {} exceeds the encoder's {} positions",
                    manifest.max_length, config.encoder.max_positions
                )));
            }
        }
        let checkpoint = Checkpoint {
            model,
            tokenizer,
            max_length: manifest.max_length,
            provenance: manifest.provenance.clone(),
        };
        Ok((checkpoint, manifest))
    }

    pub fn encode(&self, text: &str) -> TokenizedSample {
        self.tokenizer.encode(text, self.max_length)
    }
}

/// Values of every parameter by name, for comparisons in tests and tools.
pub fn named_tensors(model: &dyn Parameters<f32>) -> BTreeMap<String, Tensor<f32>> {
    let mut out = BTreeMap::new();
    model.visit_params(&mut |p| {
        out.insert(p.name.clone(), p.value.clone());
    });
    out
}
