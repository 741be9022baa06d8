use std::path::Path;

use super::{collect_records, DatasetFormat, LabeledDataset};
use crate::error::DatasetError;

fn parse_label(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// Reads an `id,source,label` CSV (columns in any order).
pub fn read_csv(path: &Path, cwe: &str) -> Result<LabeledDataset, DatasetError> {
    let parse_err = |msg: String| DatasetError::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => DatasetError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => parse_err(format!("{other:?}")),
    })?;
    let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let (id_col, source_col, label_col) = (column("id")?, column("source")?, column("label")?);

    let mut records = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let label = parse_label(field(label_col))
            .ok_or_else(|| parse_err(format!("line {line}: label {:?} is not true/false/0/1", field(label_col))))?;
        records.push((field(id_col).to_string(), field(source_col).to_string(), label));
    }
    collect_records(records, path, cwe, DatasetFormat::Csv)
}

/// Writes `id,source,label` with labels as `true`/`false`.
pub fn write_csv(ds: &LabeledDataset, path: &Path) -> Result<(), DatasetError> {
    let io = |source: std::io::Error| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(["id", "source", "label"]).map_err(|e| io(e.into()))?;
    for s in ds.samples() {
        let label = if s.label == 1 { "true" } else { "false" };
        w.write_record([s.id.as_str(), s.source.as_str(), label])
            .map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}
