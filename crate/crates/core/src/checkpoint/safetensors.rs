//! Reader for `.safetensors` files and the RoBERTa → encoder name mapping
//! used to start from published weights.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::CheckpointError;
use crate::nn::{Parameters, RngState};
use crate::tensor::Tensor;

/// One tensor, converted to f32.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

fn bad(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Import(msg.into())
}

/// Reads every tensor of a safetensors file. F32, F16 and BF16 payloads
/// are accepted.
pub fn read_safetensors(path: &Path) -> Result<BTreeMap<String, SafeTensor>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < 8 {
        return Err(bad("file shorter than the header length prefix"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    let data_start = 8u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| bad(format!("header length {header_len} exceeds the file")))? as usize;
    let header: BTreeMap<String, serde_json::Value> =
        serde_json::from_slice(&bytes[8..data_start]).map_err(|e| bad(format!("header: {e}")))?;
    let data = &bytes[data_start..];

    let mut out = BTreeMap::new();
    for (name, value) in header {
        if name == "__metadata__" {
            continue;
        }
        let entry: HeaderEntry = serde_json::from_value(value).map_err(|e| bad(format!("{name}: {e}")))?;
        let [begin, end] = entry.data_offsets;
        if begin > end || end > data.len() as u64 {
            return Err(CheckpointError::Truncated {
                needed: end,
                actual: data.len() as u64,
            });
        }
        let raw = &data[begin as usize..end as usize];
        let elems: usize = entry.shape.iter().product();
        let width = match entry.dtype.as_str() {
            "F32" => 4,
            "F16" | "BF16" => 2,
            other => return Err(bad(format!("{name}: unsupported dtype {other}"))),
        };
        if raw.len() != elems * width {
            return Err(bad(format!(
                "{name}: {} bytes for shape {:?} of {}",
                raw.len(),
                entry.shape,
                entry.dtype
            )));
        }
        let values = match entry.dtype.as_str() {
            "F32" => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            "F16" => raw
                .chunks_exact(2)
                .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
            _ => raw
                .chunks_exact(2)
                .map(|c| half::bf16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
        };
        out.insert(
            name,
            SafeTensor {
                shape: entry.shape,
                data: values,
            },
        );
    }
    Ok(out)
}

/// How a published tensor lands in the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Target {
    Copy(String),
    /// Linear weights are stored `[out, in]`; ours are `[in, out]`.
    Transpose(String),
}

/// Maps a RoBERTa parameter name (with or without the `roberta.` prefix)
/// to the encoder's name. Position and token-type tables are handled
/// separately and return `None` here, as do unrelated tensors.
pub fn roberta_name(name: &str) -> Option<String> {
    match map_name(name)? {
        Target::Copy(n) | Target::Transpose(n) => Some(n),
    }
}

fn map_name(name: &str) -> Option<Target> {
    let name = name.strip_prefix("roberta.").unwrap_or(name);
    match name {
        "embeddings.word_embeddings.weight" => return Some(Target::Copy("encoder.embeddings.token".into())),
        "embeddings.LayerNorm.weight" => return Some(Target::Copy("encoder.embeddings.norm.gamma".into())),
        "embeddings.LayerNorm.bias" => return Some(Target::Copy("encoder.embeddings.norm.beta".into())),
        _ => {}
    }
    let rest = name.strip_prefix("encoder.layer.")?;
    let (index, tail) = rest.split_once('.')?;
    let index: usize = index.parse().ok()?;
    let (module, param) = tail.rsplit_once('.')?;
    let ours = match module {
        "attention.self.query" => "attention.query",
        "attention.self.key" => "attention.key",
        "attention.self.value" => "attention.value",
        "attention.output.dense" => "attention.output",
        "attention.output.LayerNorm" => "attention_norm",
        "intermediate.dense" => "ffn.inner",
        "output.dense" => "ffn.outer",
        "output.LayerNorm" => "output_norm",
        _ => return None,
    };
    let prefix = format!("encoder.layers.{index}.{ours}");
    Some(match (module.ends_with("LayerNorm"), param) {
        (true, "weight") => Target::Copy(format!("{prefix}.gamma")),
        (true, "bias") => Target::Copy(format!("{prefix}.beta")),
        (false, "weight") => Target::Transpose(format!("{prefix}.weight")),
        (false, "bias") => Target::Copy(format!("{prefix}.bias")),
        _ => return None,
    })
}

/// RoBERTa reserves position rows 0 and 1 (ids count from pad + 1).
const POSITION_OFFSET: usize = 2;

fn is_ignored(name: &str) -> bool {
    let name = name.strip_prefix("roberta.").unwrap_or(name);
    name.starts_with("pooler.")
        || name.starts_with("lm_head.")
        || name.starts_with("classifier.")
        || name == "embeddings.position_ids"
}

fn tensor(name: &str, t: &SafeTensor) -> Result<Tensor<f32>, CheckpointError> {
    Tensor::from_vec(&t.shape, t.data.clone()).map_err(|e| bad(format!("{name}: {e}")))
}

/// Builds an encoder with `config` from RoBERTa-layout weights.
///
/// The token-type row 0 is folded into the position table, since this
/// encoder has no segment embeddings. Pooler and LM-head tensors are
/// ignored; any other unrecognised tensor is an error.
pub fn import_roberta_encoder(path: &Path, config: EncoderConfig) -> Result<Encoder<f32>, CheckpointError> {
    let tensors = read_safetensors(path)?;
    let mut mapped: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    let mut positions = None;
    let mut token_type = None;
    for (name, t) in &tensors {
        let bare = name.strip_prefix("roberta.").unwrap_or(name);
        match bare {
            "embeddings.position_embeddings.weight" => positions = Some(t),
            "embeddings.token_type_embeddings.weight" => token_type = Some(t),
            _ => match map_name(name) {
                Some(Target::Copy(ours)) => {
                    mapped.insert(ours, tensor(name, t)?);
                }
                Some(Target::Transpose(ours)) => {
                    if t.shape.len() != 2 {
                        return Err(bad(format!("{name}: expected a matrix, found {:?}", t.shape)));
                    }
                    mapped.insert(ours, tensor(name, t)?.transpose());
                }
                None if is_ignored(name) => {}
                None => return Err(CheckpointError::UnexpectedTensor(name.clone())),
            },
        }
    }

    let positions = positions.ok_or_else(|| CheckpointError::MissingTensor("embeddings.position_embeddings.weight".into()))?;
    let hidden = config.hidden_dim;
    let rows_needed = config.max_positions + POSITION_OFFSET;
    if positions.shape.len() != 2 || positions.shape[0] < rows_needed || positions.shape[1] != hidden {
        return Err(CheckpointError::TensorShape {
            name: "embeddings.position_embeddings.weight".into(),
            expected: vec![rows_needed, hidden],
            found: positions.shape.clone(),
        });
    }
    let mut table = positions.data[POSITION_OFFSET * hidden..rows_needed * hidden].to_vec();
    if let Some(tt) = token_type {
        if tt.shape.len() != 2 || tt.shape[1] != hidden || tt.shape[0] == 0 {
            return Err(CheckpointError::TensorShape {
                name: "embeddings.token_type_embeddings.weight".into(),
                expected: vec![1, hidden],
                found: tt.shape.clone(),
            });
        }
        for row in table.chunks_exact_mut(hidden) {
            for (v, t) in row.iter_mut().zip(&tt.data[..hidden]) {
                *v += t;
            }
        }
    }
    mapped.insert(
        "encoder.embeddings.position".into(),
        Tensor::from_vec(&[config.max_positions, hidden], table).map_err(|e| bad(e.to_string()))?,
    );

    let mut encoder = Encoder::init(config, &mut RngState::new(0))?;
    let mut failure = None;
    encoder.visit_params_mut(&mut |p| {
        if failure.is_some() {
            return;
        }
        match mapped.remove(&p.name) {
            None => failure = Some(CheckpointError::MissingTensor(p.name.clone())),
            Some(t) if t.shape() != p.shape() => {
                failure = Some(CheckpointError::TensorShape {
                    name: p.name.clone(),
                    expected: p.shape().to_vec(),
                    found: t.shape().to_vec(),
                })
            }
            Some(t) => p.value = t,
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(name) = mapped.keys().next() {
        return Err(CheckpointError::UnexpectedTensor(name.clone()));
    }
    Ok(encoder)
}
