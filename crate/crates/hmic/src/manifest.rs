//! The dataset manifest: one JSON record per patch, one patch per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use hmic_core::labels::{ChildLabel, ParentLabel, Split};

use crate::error::{PipelineError, Result};

pub const CLUSTER_USEFUL: &str = "useful";
pub const CLUSTER_NOT_USEFUL: &str = "not_useful";

/// One tile of a slide. Labels, cluster flag, and split are stored as their
/// string tokens; `validate` enforces the allowed values and the rule that
/// severity labels appear only on Celiac patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub slide_id: String,
    pub patch_id: String,
    pub row: usize,
    pub col: usize,
    /// Path of the patch PNG, relative to the patch root.
    pub path: String,
    pub label_parent: Option<String>,
    pub label_child: Option<String>,
    pub cluster: Option<String>,
    pub split: String,
}

impl PatchRecord {
    pub fn parent_label(&self) -> Result<Option<ParentLabel>> {
        self.label_parent
            .as_deref()
            .map(|s| ParentLabel::from_str(s).map_err(PipelineError::from))
            .transpose()
    }

    pub fn child_label(&self) -> Result<Option<ChildLabel>> {
        self.label_child
            .as_deref()
            .map(|s| ChildLabel::from_str(s).map_err(PipelineError::from))
            .transpose()
    }

    pub fn split_value(&self) -> Result<Split> {
        Split::from_str(&self.split).map_err(PipelineError::from)
    }

    pub fn is_useful(&self) -> bool {
        // unfiltered manifests keep everything
        self.cluster.as_deref() != Some(CLUSTER_NOT_USEFUL)
    }

    pub fn validate(&self) -> Result<()> {
        let parent = self.parent_label()?;
        let child = self.child_label()?;
        self.split_value()?;
        if let Some(cluster) = self.cluster.as_deref() {
            if cluster != CLUSTER_USEFUL && cluster != CLUSTER_NOT_USEFUL {
                return Err(PipelineError::Record(format!(
                    "patch {}: unknown cluster value {cluster:?}",
                    self.patch_id
                )));
            }
        }
        if child.is_some() && parent != Some(ParentLabel::Celiac) {
            return Err(PipelineError::Record(format!(
                "patch {}: severity label requires a Celiac parent label",
                self.patch_id
            )));
        }
        Ok(())
    }
}

/// Writes records as JSON Lines (UTF-8, stable field order).
pub fn write_manifest(records: &[PatchRecord], path: &Path) -> Result<()> {
    for record in records {
        record.validate()?;
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| PipelineError::format(path, format!("record serialization: {e}")))?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| PipelineError::io(path, e))?;
    }
    out.flush().map_err(|e| PipelineError::io(path, e))?;
    Ok(())
}

/// Reads a JSON-Lines manifest, reporting the line number of any malformed
/// or invalid record.
pub fn read_manifest(path: &Path) -> Result<Vec<PatchRecord>> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatchRecord = serde_json::from_str(&line).map_err(|e| PipelineError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        record.validate().map_err(|e| PipelineError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize) -> PatchRecord {
        PatchRecord {
            slide_id: "s1".into(),
            patch_id: format!("s1:{i}_0"),
            row: i,
            col: 0,
            path: format!("s1/{i}_0.png"),
            label_parent: Some("Celiac".into()),
            label_child: Some("IIIb".into()),
            cluster: Some(CLUSTER_USEFUL.into()),
            split: "train".into(),
        }
    }

    #[test]
    fn empty_manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        write_manifest(&[], &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), vec![]);
    }

    #[test]
    fn six_patch_manifest_round_trips_field_for_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let records: Vec<PatchRecord> = (0..6).map(record).collect();
        write_manifest(&records, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), records);
    }

    #[test]
    fn child_label_without_celiac_parent_is_invalid() {
        let mut bad = record(0);
        bad.label_parent = Some("Normal".into());
        assert!(bad.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        assert!(write_manifest(&[bad], &path).is_err());
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let good = serde_json::to_string(&record(0)).unwrap();
        std::fs::write(&path, format!("{good}\nnot json\n")).unwrap();
        let err = read_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn unknown_cluster_value_is_rejected() {
        let mut bad = record(0);
        bad.cluster = Some("maybe".into());
        assert!(bad.validate().is_err());
    }
}
