//! Scanning source trees with a loaded checkpoint.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use npdscan::checkpoint::Checkpoint;
use npdscan::head::Verdict;
use npdscan::model::Classifier;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::split::split_functions;

pub const SCAN_SCHEMA_VERSION: u32 = 1;

/// File extensions treated as C or C++ source.
pub const SOURCE_EXTENSIONS: &[&str] = &["c", "h", "cc", "cpp", "cxx", "hh", "hpp", "hxx"];

/// Largest f64 below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl ToolInfo {
    pub fn current() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub path: String,
    pub weights_sha256: String,
    pub model: String,
    pub epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSettings {
    /// Confidence a vulnerable verdict needs before it counts as a finding.
    pub threshold: f64,
    pub max_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub file: String,
    pub function: String,
    pub line: usize,
    pub start_byte: usize,
    pub end_byte: usize,
    pub verdict: Verdict,
    pub confidence: f64,
    pub logits: [f64; 2],
    /// Vulnerable verdict at or above the threshold.
    pub finding: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub files: usize,
    pub functions: usize,
    pub vulnerable: usize,
    pub non_vulnerable: usize,
    pub findings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub schema_version: u32,
    pub tool: ToolInfo,
    pub checkpoint: CheckpointInfo,
    pub config: ScanSettings,
    pub entries: Vec<ScanEntry>,
    pub summary: ScanSummary,
    pub generated_at: String,
}

impl ScanReport {
    pub fn has_findings(&self) -> bool {
        self.summary.findings > 0
    }
}

fn is_source(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| SOURCE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Source files under `inputs`, sorted, with explicitly named files kept
/// regardless of extension.
pub fn collect_sources(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        let meta = std::fs::metadata(input).with_context(|| format!("cannot read {}", input.display()))?;
        if meta.is_file() {
            files.push(input.clone());
            continue;
        }
        for entry in walkdir::WalkDir::new(input).sort_by_file_name() {
            let entry = entry.with_context(|| format!("cannot walk {}", input.display()))?;
            if entry.file_type().is_file() && is_source(entry.path()) {
                files.push(entry.into_path());
            }
        }
    }
    files.sort();
    files.dedup();
    Ok(files)
}

fn scan_file(path: &Path, ck: &Checkpoint, threshold: f64) -> Result<Vec<ScanEntry>> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let text = String::from_utf8_lossy(&bytes);
    let file = path.display().to_string();
    split_functions(&text)
        .into_iter()
        .map(|f| {
            let sample = ck.encode(&text[f.start..f.end]);
            let id = format!("{file}:{}", f.name);
            let p = ck
                .model
                .predict(&id, &sample)
                .with_context(|| format!("scoring {id}"))?;
            let confidence = p.confidence().clamp(f64::MIN_POSITIVE, BELOW_ONE);
            Ok(ScanEntry {
                file: file.clone(),
                function: f.name,
                line: f.line,
                start_byte: f.start,
                end_byte: f.end,
                verdict: p.verdict,
                confidence,
                logits: p.logits,
                finding: p.verdict == Verdict::Vulnerable && confidence >= threshold,
            })
        })
        .collect()
}

/// Scores every function of every file. Files are processed in parallel;
/// entries come out in file order, then source order.
pub fn scan(files: &[PathBuf], ck: &Checkpoint, threshold: f64, info: CheckpointInfo) -> Result<ScanReport> {
    let per_file: Vec<Vec<ScanEntry>> = files
        .par_iter()
        .map(|f| scan_file(f, ck, threshold))
        .collect::<Result<_>>()?;
    let entries: Vec<ScanEntry> = per_file.into_iter().flatten().collect();
    let vulnerable = entries.iter().filter(|e| e.verdict == Verdict::Vulnerable).count();
    let summary = ScanSummary {
        files: files.len(),
        functions: entries.len(),
        vulnerable,
        non_vulnerable: entries.len() - vulnerable,
        findings: entries.iter().filter(|e| e.finding).count(),
    };
    Ok(ScanReport {
        schema_version: SCAN_SCHEMA_VERSION,
        tool: ToolInfo::current(),
        checkpoint: info,
        config: ScanSettings {
            threshold,
            max_length: ck.max_length,
        },
        entries,
        summary,
        generated_at: crate::timestamp(),
    })
}
