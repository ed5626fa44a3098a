//! Gradient-weighted class activation heatmaps.
//!
//! The target-class logit is differentiated w.r.t. the feature grid feeding
//! the flatten layer; per-channel gradients are global-average-pooled into
//! weights, the weighted channel sum is rectified, upsampled bilinearly to
//! input resolution, and normalized by its maximum.

use alloc::vec;

#[allow(unused_imports)]
use num_traits::Float as _;

use crate::arch::{flatten_layer_index, ModelBundle};
use crate::error::{Error, Result};
use crate::net::{LayerCache, Mode};
use crate::ops::resize::resize_bilinear;
use crate::real::Real;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassActivationMap {
    /// Input-sized single-channel heatmap in [0, 1].
    pub heatmap: Tensor3<f32>,
    /// Set when the rectified map was identically zero; the heatmap is
    /// returned as zeros instead of being normalized.
    pub degenerate: bool,
}

pub fn grad_cam<F: Real>(
    bundle: &ModelBundle<F>,
    patch: &Tensor3<F>,
    target_class: usize,
) -> Result<ClassActivationMap> {
    let flatten = flatten_layer_index(&bundle.net)?;
    let (out, caches) = bundle.net.forward_cached(patch, Mode::Infer)?;
    let n_logits = out.len();
    if target_class >= n_logits {
        return Err(Error::Argument(alloc::format!(
            "target class {target_class} out of range for {n_logits} outputs"
        )));
    }

    let mut upstream = vec![F::zero(); n_logits];
    upstream[target_class] = F::one();
    let (_, feature_grad) = bundle.net.backward(
        &caches,
        Tensor3::from_raw(1, 1, n_logits, upstream),
        flatten,
    )?;

    let features = match &caches[flatten] {
        LayerCache::Reshape { input } => input,
        _ => {
            return Err(Error::Configuration(
                "flatten cache missing from the forward pass".into(),
            ))
        }
    };
    let (h, w, c) = features.shape();

    // channel weights: spatial mean of the gradient
    let mut weights = vec![0.0f64; c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                weights[ch] += feature_grad.at(y, x, ch).to_f64_lossy();
            }
        }
    }
    let inv_area = 1.0 / (h * w) as f64;
    for wgt in &mut weights {
        *wgt *= inv_area;
    }

    // rectified weighted channel sum
    let mut cam = Tensor3::<f64>::zeros(h, w, 1);
    let mut max = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for ch in 0..c {
                acc += weights[ch] * features.at(y, x, ch).to_f64_lossy();
            }
            let v = acc.max(0.0);
            cam.set(y, x, 0, v);
            if v > max {
                max = v;
            }
        }
    }

    let upsampled = resize_bilinear(&cam, patch.height(), patch.width())?;
    if max <= 0.0 {
        return Ok(ClassActivationMap {
            heatmap: Tensor3::zeros(patch.height(), patch.width(), 1),
            degenerate: true,
        });
    }
    let heatmap = upsampled.map(|v| (v / max).clamp(0.0, 1.0)).cast::<f32>();
    Ok(ClassActivationMap {
        heatmap,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_architecture, Level, TrunkShape};
    use crate::train::TrainConfig;

    #[test]
    fn heatmap_is_input_sized_and_bounded() {
        let mut cfg = TrainConfig::for_level(Level::Parent);
        cfg.seed = 5;
        let bundle =
            build_architecture::<f32>(Level::Parent, TrunkShape::COMPACT_128, &cfg).unwrap();
        let mut patch = Tensor3::<f32>::zeros(128, 128, 3);
        let mut stream = crate::rng::stream(2);
        for v in patch.data_mut() {
            *v = rand::Rng::gen_range(&mut stream, 0.0..1.0);
        }
        let cam = grad_cam(&bundle, &patch, 1).unwrap();
        assert_eq!(cam.heatmap.shape(), (128, 128, 1));
        assert!(cam
            .heatmap
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn out_of_range_class_is_rejected() {
        let cfg = TrainConfig::for_level(Level::Parent);
        let bundle =
            build_architecture::<f32>(Level::Parent, TrunkShape::COMPACT_128, &cfg).unwrap();
        let patch = Tensor3::<f32>::zeros(128, 128, 3);
        assert!(matches!(
            grad_cam(&bundle, &patch, 3).unwrap_err(),
            Error::Argument(_)
        ));
    }

    #[test]
    fn zero_activation_grid_is_flagged_degenerate() {
        // A zero-weight network produces a zero feature grid, so the
        // rectified map is identically zero.
        let cfg = TrainConfig::for_level(Level::Parent);
        let mut bundle =
            build_architecture::<f32>(Level::Parent, TrunkShape::COMPACT_128, &cfg).unwrap();
        for p in bundle.net.params_mut() {
            *p = 0.0;
        }
        let patch = Tensor3::filled(128, 128, 3, 0.5f32);
        let cam = grad_cam(&bundle, &patch, 0).unwrap();
        assert!(cam.degenerate);
        assert!(cam.heatmap.data().iter().all(|&v| v == 0.0));
    }
}
