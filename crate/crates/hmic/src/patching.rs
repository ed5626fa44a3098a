//! Slide tiling and the slide-labels table.

use std::collections::BTreeMap;
use std::path::Path;

use hmic_core::labels::{ChildLabel, ParentLabel, Split};
use hmic_core::Tensor3;

use crate::error::{PipelineError, Result};
use crate::image_io::SlideImage;
use crate::manifest::PatchRecord;

/// Labels (and optionally a split) for one slide, from the labels CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideLabels {
    pub label_parent: ParentLabel,
    pub label_child: Option<ChildLabel>,
    pub split: Option<Split>,
}

/// One tiled patch: its manifest record and pixels.
#[derive(Debug, Clone)]
pub struct TiledPatch {
    pub record: PatchRecord,
    pub pixels: Tensor3<f32>,
}

/// Tiling result; `warnings` records slides too small to produce patches.
#[derive(Debug, Clone, Default)]
pub struct TileOutcome {
    pub patches: Vec<TiledPatch>,
    pub warnings: Vec<String>,
}

/// Cuts a slide into `patch_size` tiles at `stride` steps. Windows that
/// would cross the border are dropped; every patch inherits the slide's
/// labels and split. Patch paths are `<slide_id>/<row>_<col>.png` relative
/// to the patch root.
pub fn tile_slide(
    slide: &SlideImage,
    patch_size: usize,
    stride: usize,
    labels: Option<&SlideLabels>,
    split: Split,
) -> Result<TileOutcome> {
    if patch_size == 0 || stride == 0 {
        return Err(PipelineError::Config(
            "patch size and stride must be positive".into(),
        ));
    }
    let (h, w, c) = slide.pixels.shape();
    if c != 3 {
        return Err(PipelineError::Record(format!(
            "slide {} has {c} channels, expected RGB",
            slide.slide_id
        )));
    }
    let mut outcome = TileOutcome::default();
    if h < patch_size || w < patch_size {
        outcome.warnings.push(format!(
            "slide {} ({h}x{w}) smaller than patch size {patch_size}; no patches produced",
            slide.slide_id
        ));
        return Ok(outcome);
    }

    let rows = (h - patch_size) / stride + 1;
    let cols = (w - patch_size) / stride + 1;
    for row in 0..rows {
        for col in 0..cols {
            let y0 = row * stride;
            let x0 = col * stride;
            let mut data = Vec::with_capacity(patch_size * patch_size * 3);
            for y in y0..y0 + patch_size {
                let off = (y * w + x0) * 3;
                data.extend_from_slice(&slide.pixels.data()[off..off + patch_size * 3]);
            }
            let pixels = Tensor3::from_vec(patch_size, patch_size, 3, data)?;
            let record = PatchRecord {
                slide_id: slide.slide_id.clone(),
                patch_id: format!("{}:{row}_{col}", slide.slide_id),
                row,
                col,
                path: format!("{}/{row}_{col}.png", slide.slide_id),
                label_parent: labels.map(|l| l.label_parent.as_str().to_string()),
                label_child: labels
                    .and_then(|l| l.label_child)
                    .map(|c| c.as_str().to_string()),
                cluster: None,
                split: split.as_str().to_string(),
            };
            outcome.patches.push(TiledPatch { record, pixels });
        }
    }
    Ok(outcome)
}

/// Reads the slide-labels CSV: `slide_id,label_parent,label_child[,split]`,
/// with a header row. Empty child labels mean none.
pub fn read_labels_csv(path: &Path) -> Result<BTreeMap<String, SlideLabels>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| PipelineError::format(path, format!("labels CSV: {e}")))?;
    let mut labels = BTreeMap::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| PipelineError::Parse {
            path: path.to_path_buf(),
            line: idx + 2,
            message: e.to_string(),
        })?;
        let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let slide_id = field(0);
        if slide_id.is_empty() {
            continue;
        }
        let parse = |r: std::result::Result<_, hmic_core::Error>| {
            r.map_err(|e| PipelineError::Parse {
                path: path.to_path_buf(),
                line: idx + 2,
                message: e.to_string(),
            })
        };
        let label_parent = parse(ParentLabel::from_str(&field(1)))?;
        let child_text = field(2);
        let label_child = if child_text.is_empty() {
            None
        } else {
            Some(parse(ChildLabel::from_str(&child_text))?)
        };
        let split_text = field(3);
        let split = if split_text.is_empty() {
            None
        } else {
            Some(parse(Split::from_str(&split_text))?)
        };
        labels.insert(
            slide_id,
            SlideLabels {
                label_parent,
                label_child,
                split,
            },
        );
    }
    Ok(labels)
}

/// Writes the labels CSV with the optional split column.
pub fn write_labels_csv(path: &Path, rows: &[(String, SlideLabels)]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| PipelineError::format(path, format!("labels CSV: {e}")))?;
    writer
        .write_record(["slide_id", "label_parent", "label_child", "split"])
        .map_err(|e| PipelineError::format(path, e.to_string()))?;
    for (slide_id, labels) in rows {
        writer
            .write_record([
                slide_id.as_str(),
                labels.label_parent.as_str(),
                labels.label_child.map(|c| c.as_str()).unwrap_or(""),
                labels.split.map(|s| s.as_str()).unwrap_or(""),
            ])
            .map_err(|e| PipelineError::format(path, e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| PipelineError::io(path, e))?;
    Ok(())
}
