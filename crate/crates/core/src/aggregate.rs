//! Patch classification and whole-slide aggregation.
//!
//! Each patch gets a softmax probability vector; a slide's label maximizes
//! the per-class sum of those vectors over its patches. Hierarchical
//! prediction gates the child (severity) model on the parent's slide-level
//! Celiac verdict.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::arch::ModelBundle;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::ops::activation::{argmax, softmax};
use crate::real::Real;
use crate::tensor::Tensor3;

/// Softmax distribution and most-likely class for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPrediction {
    pub probs: Vec<f64>,
    pub label: usize,
}

/// Aggregated whole-slide verdict. `aggregate` is the per-class sum of the
/// patch vectors normalized by the patch count; `child` carries the
/// severity verdict when the slide is Celiac and a child model ran.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidePrediction {
    pub slide_id: String,
    pub n_patches: usize,
    pub patch_probs: Vec<Vec<f64>>,
    pub aggregate: Vec<f64>,
    pub label: usize,
    pub child: Option<Box<SlidePrediction>>,
}

/// Forward pass + softmax; ties resolve to the smallest class index.
pub fn classify_patch<F: Real>(
    bundle: &ModelBundle<F>,
    patch: &Tensor3<F>,
) -> Result<PatchPrediction> {
    let out = bundle.net.forward(patch)?;
    let probs_f = softmax(out.data())?;
    let probs: Vec<f64> = probs_f.iter().map(|v| v.to_f64_lossy()).collect();
    let label = argmax(&probs);
    Ok(PatchPrediction { probs, label })
}

/// Classifies a batch through the executor; predictions come back in order.
pub fn classify_patches<F: Real, E: Executor>(
    bundle: &ModelBundle<F>,
    patches: &[Tensor3<F>],
    exec: &E,
) -> Result<Vec<PatchPrediction>> {
    exec.map(patches, |_, patch| classify_patch(bundle, patch))
        .into_iter()
        .collect()
}

/// Slide label = argmax over the summed patch probability vectors.
pub fn classify_slide(slide_id: &str, predictions: &[PatchPrediction]) -> Result<SlidePrediction> {
    if predictions.is_empty() {
        return Err(Error::EmptySlide);
    }
    let n_classes = predictions[0].probs.len();
    let mut sums = vec![0.0f64; n_classes];
    for p in predictions {
        if p.probs.len() != n_classes {
            return Err(Error::Dimension(format!(
                "patch prediction with {} classes among {n_classes}-class peers",
                p.probs.len()
            )));
        }
        for (s, &v) in sums.iter_mut().zip(&p.probs) {
            *s += v;
        }
    }
    let label = argmax(&sums);
    let n = predictions.len();
    let aggregate: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    Ok(SlidePrediction {
        slide_id: slide_id.into(),
        n_patches: n,
        patch_probs: predictions.iter().map(|p| p.probs.clone()).collect(),
        aggregate,
        label,
        child: None,
    })
}

/// Parent verdict on the slide; iff it is Celiac, the child model grades
/// severity over `child_patches` (the same patches with the child-level
/// stain transform, produced lazily so non-Celiac slides never pay for it).
pub fn hierarchical_predict<F, E, P>(
    parent: &ModelBundle<F>,
    child: Option<&ModelBundle<F>>,
    slide_id: &str,
    parent_patches: &[Tensor3<F>],
    child_patches: P,
    exec: &E,
) -> Result<SlidePrediction>
where
    F: Real,
    E: Executor,
    P: FnOnce() -> Result<Vec<Tensor3<F>>>,
{
    let parent_preds = classify_patches(parent, parent_patches, exec)?;
    let mut slide = classify_slide(slide_id, &parent_preds)?;

    let celiac = parent
        .class_index("Celiac")
        .ok_or_else(|| Error::Configuration("parent model has no Celiac class".into()))?;
    if slide.label == celiac {
        let child_model = child.ok_or_else(|| {
            Error::Configuration("slide is Celiac but no child model is configured".into())
        })?;
        let patches = child_patches()?;
        let child_preds = classify_patches(child_model, &patches, exec)?;
        let child_slide = classify_slide(slide_id, &child_preds)?;
        slide.child = Some(Box::new(child_slide));
    }
    Ok(slide)
}

/// Per-patch composite labels in the 6-way flat order (Normal, EE, then the
/// four severities): the parent decides per patch, and Celiac patches are
/// graded by the child model. This is the patch-level hierarchical route,
/// used for comparisons against flat 6-way baselines.
pub fn hierarchical_patch_labels<F: Real, E: Executor>(
    parent: &ModelBundle<F>,
    child: &ModelBundle<F>,
    parent_patches: &[Tensor3<F>],
    child_patches: &[Tensor3<F>],
    exec: &E,
) -> Result<Vec<usize>> {
    if parent_patches.len() != child_patches.len() {
        return Err(Error::Dimension(format!(
            "{} parent-transformed vs {} child-transformed patches",
            parent_patches.len(),
            child_patches.len()
        )));
    }
    let celiac = parent
        .class_index("Celiac")
        .ok_or_else(|| Error::Configuration("parent model has no Celiac class".into()))?;
    let parent_preds = classify_patches(parent, parent_patches, exec)?;
    let mut labels = Vec::with_capacity(parent_preds.len());
    for (i, pred) in parent_preds.iter().enumerate() {
        if pred.label == celiac {
            let severity = classify_patch(child, &child_patches[i])?;
            labels.push(2 + severity.label);
        } else {
            labels.push(pred.label);
        }
    }
    Ok(labels)
}
