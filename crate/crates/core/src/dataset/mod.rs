//! Labeled function corpora: loading, label casting, class balancing,
//! k-fold plans and split manifests.

mod csv_io;
#[cfg(feature = "hdf5")]
mod hdf5;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use csv_io::{read_csv, write_csv};
#[cfg(feature = "hdf5")]
pub use hdf5::{read_vdisc, SOURCE_DATASET};

use crate::error::DatasetError;
use crate::nn::RngState;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeSample {
    pub id: String,
    pub source: String,
    /// 1 = vulnerable, 0 = not.
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetFormat {
    #[serde(rename = "hdf5-vdisc")]
    Hdf5Vdisc,
    #[serde(rename = "csv")]
    Csv,
}

impl DatasetFormat {
    /// Guesses from the file extension (`.h5`/`.hdf5` or `.csv`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "h5" | "hdf5" => Some(DatasetFormat::Hdf5Vdisc),
            "csv" => Some(DatasetFormat::Csv),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetFormat::Hdf5Vdisc => "hdf5-vdisc",
            DatasetFormat::Csv => "csv",
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hdf5-vdisc" | "hdf5" => Ok(DatasetFormat::Hdf5Vdisc),
            "csv" => Ok(DatasetFormat::Csv),
            other => Err(DatasetError::Format(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: PathBuf,
    pub cwe: String,
    pub format: DatasetFormat,
    /// Records dropped because their source was empty or whitespace.
    pub skipped_empty: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    samples: Vec<CodeSample>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    /// Checks ids are unique, sources non-blank and labels binary.
    pub fn new(samples: Vec<CodeSample>, provenance: Provenance) -> Result<Self, DatasetError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(DatasetError::DuplicateId(s.id.clone()));
            }
            if s.label > 1 {
                return Err(DatasetError::Parse {
                    path: provenance.path.clone(),
                    msg: format!("sample {:?} has label {}", s.id, s.label),
                });
            }
            if s.source.trim().is_empty() {
                return Err(DatasetError::Parse {
                    path: provenance.path.clone(),
                    msg: format!("sample {:?} has an empty source", s.id),
                });
            }
        }
        Ok(Self { samples, provenance })
    }

    pub fn samples(&self) -> &[CodeSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `[negatives, positives]`.
    pub fn class_counts(&self) -> ClassCounts {
        let mut c = ClassCounts::default();
        for s in &self.samples {
            c.add(s.label);
        }
        c
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Per-class sample counts, serialized as `{"0": .., "1": ..}`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    #[serde(rename = "0")]
    pub negative: usize,
    #[serde(rename = "1")]
    pub positive: usize,
}

impl ClassCounts {
    pub fn add(&mut self, label: u8) {
        if label == 1 {
            self.positive += 1;
        } else {
            self.negative += 1;
        }
    }

    pub fn get(&self, label: u8) -> usize {
        if label == 1 {
            self.positive
        } else {
            self.negative
        }
    }

    pub fn total(&self) -> usize {
        self.negative + self.positive
    }
}

/// Loads a labeled corpus. For CSV the label column is always `label` and
/// `cwe` is only recorded; for HDF5 it names the boolean dataset.
pub fn load_dataset(path: &Path, cwe: &str, format: DatasetFormat) -> Result<LabeledDataset, DatasetError> {
    if !path.exists() {
        return Err(DatasetError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        });
    }
    match format {
        DatasetFormat::Csv => read_csv(path, cwe),
        #[cfg(feature = "hdf5")]
        DatasetFormat::Hdf5Vdisc => read_vdisc(path, cwe),
        #[cfg(not(feature = "hdf5"))]
        DatasetFormat::Hdf5Vdisc => Err(DatasetError::Format(
            "hdf5-vdisc (built without the `hdf5` feature)".into(),
        )),
    }
}

/// Turns raw records into a dataset, skipping blank sources.
pub(crate) fn collect_records(
    records: impl IntoIterator<Item = (String, String, bool)>,
    path: &Path,
    cwe: &str,
    format: DatasetFormat,
) -> Result<LabeledDataset, DatasetError> {
    let mut skipped = 0;
    let mut samples = Vec::new();
    for (id, source, label) in records {
        if source.trim().is_empty() {
            skipped += 1;
            continue;
        }
        samples.push(CodeSample {
            id,
            source,
            label: label as u8,
        });
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} records with empty source", path.display());
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset {
            path: path.to_path_buf(),
            skipped,
        });
    }
    LabeledDataset::new(
        samples,
        Provenance {
            path: path.to_path_buf(),
            cwe: cwe.to_string(),
            format,
            skipped_empty: skipped,
        },
    )
}

pub fn cast_labels(raw: &[bool]) -> Vec<u8> {
    raw.iter().map(|&b| b as u8).collect()
}

/// Undersamples the majority class to the minority count, keeping the
/// minority whole and the original order.
pub fn balance(ds: &LabeledDataset, seed: u64) -> Result<LabeledDataset, DatasetError> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, s) in ds.samples.iter().enumerate() {
        by_class[s.label as usize].push(i);
    }
    for (label, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            return Err(DatasetError::DegenerateClassBalance { label: label as u8 });
        }
    }
    let keep = by_class[0].len().min(by_class[1].len());
    let mut rng = RngState::new(seed);
    let mut retained = Vec::with_capacity(2 * keep);
    for members in &by_class {
        if members.len() == keep {
            retained.extend_from_slice(members);
        } else {
            retained.extend(sample(rng.rng(), members.len(), keep).into_iter().map(|j| members[j]));
        }
    }
    retained.sort_unstable();
    Ok(ds.subset(&retained))
}

/// Seeded shuffle-and-split; the test side gets `round(n · test_fraction)`
/// samples.
pub fn train_test_split(
    ds: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), DatasetError> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(DatasetError::Format(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let n = ds.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(DatasetError::Format(format!(
            "test fraction {test_fraction} leaves an empty split of {n} samples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(RngState::new(seed).rng());
    let (test, train) = order.split_at_mut(n_test);
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(train), ds.subset(test)))
}

/// Assignment of each sample to one of `k` validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    /// Seeded shuffle, then round-robin: the j-th shuffled sample goes to
    /// fold `j mod k`.
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self, DatasetError> {
        if k < 2 || k > n {
            return Err(DatasetError::FoldCount { k, n });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(RngState::new(seed).rng());
        let mut assignments = vec![0; n];
        for (j, &i) in order.iter().enumerate() {
            assignments[i] = j % k;
        }
        Ok(Self { k, assignments })
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

pub fn make_folds(ds: &LabeledDataset, k: usize, seed: u64) -> Result<FoldPlan, DatasetError> {
    FoldPlan::new(ds.len(), k, seed)
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub file: String,
    pub samples: usize,
    pub class_counts: ClassCounts,
}

impl SplitSummary {
    pub fn of(file: &str, ds: &LabeledDataset) -> Self {
        Self {
            file: file.to_string(),
            samples: ds.len(),
            class_counts: ds.class_counts(),
        }
    }
}

/// Written beside materialized splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub cwe: String,
    pub balanced: bool,
    pub sources: Vec<Provenance>,
    pub train: SplitSummary,
    pub test: SplitSummary,
    pub total_samples: usize,
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}
