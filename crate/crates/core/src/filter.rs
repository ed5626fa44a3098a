//! Uninformative-patch removal: a convolutional autoencoder embeds each
//! patch into a 256-value bottleneck code, 2-means splits the codes, and
//! the cluster with the lower mean luminance is kept as tissue (background
//! patches are white or light gray).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::adam::{adam_step, AdamState};
use crate::arch::{build_architecture, Level, ModelBundle, TrunkShape, AUTOENCODER_INPUT};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::kmeans::KMeansState;
use crate::net::Mode;
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor3;
use crate::train::{EpochStats, TrainConfig, TrainHistory};

use rand::seq::SliceRandom;

/// Which cluster holds the informative patches, and why.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDecision {
    pub useful_cluster: usize,
    pub mean_luminance: [f64; 2],
    pub criterion: String,
}

/// Luminance gap below which the decision is refused as ambiguous.
pub const LUMINANCE_MARGIN: f64 = 1e-3;

fn bottleneck_split<F: Real>(bundle: &ModelBundle<F>) -> Result<usize> {
    if bundle.level != Level::Autoencoder {
        return Err(Error::Configuration(format!(
            "expected an autoencoder bundle, got level {}",
            bundle.level.as_str()
        )));
    }
    bundle
        .bottleneck_split
        .ok_or_else(|| Error::Configuration("autoencoder bundle lacks a bottleneck split".into()))
}

/// Bottleneck code of one patch (flattened 8x8x4 = 256 values for the
/// default input resolution). The patch must already be at the
/// autoencoder's input resolution.
pub fn encode<F: Real>(bundle: &ModelBundle<F>, patch: &Tensor3<F>) -> Result<Vec<F>> {
    let split = bottleneck_split(bundle)?;
    let (code, _) = bundle
        .net
        .forward_range(patch, 0, split, Mode::Infer)?;
    Ok(code.into_data())
}

/// Reconstruction from a bottleneck code; output dims equal the
/// autoencoder's input dims.
pub fn decode<F: Real>(bundle: &ModelBundle<F>, code: &[F]) -> Result<Tensor3<F>> {
    let split = bottleneck_split(bundle)?;
    let (h, w, c) = bundle.net.shape_at(split);
    if code.len() != h * w * c {
        return Err(Error::Dimension(format!(
            "code length {} does not match bottleneck {}x{}x{}",
            code.len(),
            h,
            w,
            c
        )));
    }
    if !code.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite bottleneck code".into()));
    }
    let tensor = Tensor3::from_raw(h, w, c, code.to_vec());
    let (out, _) = bundle
        .net
        .forward_range(&tensor, split, bundle.net.specs().len(), Mode::Infer)?;
    Ok(out)
}

/// Mean squared reconstruction error of the full encode/decode pass.
pub fn reconstruction_mse<F: Real>(bundle: &ModelBundle<F>, patch: &Tensor3<F>) -> Result<f64> {
    let out = bundle.net.forward(patch)?;
    let mut acc = 0.0f64;
    for (&a, &b) in out.data().iter().zip(patch.data()) {
        let d = (a - b).to_f64_lossy();
        acc += d * d;
    }
    Ok(acc / patch.len() as f64)
}

/// Trains the autoencoder by minimizing mean squared reconstruction error
/// with Adam. Patches must be at the autoencoder input resolution.
pub fn train_autoencoder<F: Real, E: Executor>(
    patches: &[Tensor3<F>],
    epochs: usize,
    seed: u64,
    exec: &E,
) -> Result<(ModelBundle<F>, TrainHistory)> {
    if patches.is_empty() {
        return Err(Error::Argument(
            "autoencoder training needs at least one patch".into(),
        ));
    }
    let mut cfg = TrainConfig::for_level(Level::Autoencoder);
    cfg.epochs = epochs;
    cfg.seed = seed;
    cfg.dropout_conv = 0.0;
    cfg.dropout_dense = 0.0;
    let shape = TrunkShape {
        input: AUTOENCODER_INPUT,
        pools: [4, 4, 4], // unused by the autoencoder stack
    };
    let mut bundle = build_architecture::<F>(Level::Autoencoder, shape, &cfg)?;

    let mut adam = AdamState::<F>::new(
        bundle.net.param_count(),
        cfg.alpha,
        cfg.beta1,
        cfg.beta2,
        cfg.epsilon,
    );
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..patches.len()).collect();

    for epoch in 0..epochs {
        let mut shuffle_rng = rng::substream(seed, &[0xAE, epoch as u64]);
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let net = &bundle.net;
            let results = exec.map(batch, |_, &sample| -> Result<(f64, Vec<F>)> {
                let patch = &patches[sample];
                let (out, caches) = net.forward_cached(patch, Mode::Infer)?;
                let n = patch.len();
                let scale = F::of(2.0 / n as f64);
                let mut mse = 0.0f64;
                let mut grad = out.clone();
                for (g, &target) in grad.data_mut().iter_mut().zip(patch.data()) {
                    let diff = *g - target;
                    mse += diff.to_f64_lossy() * diff.to_f64_lossy();
                    *g = diff * scale;
                }
                let (grads, _) = net.backward(&caches, grad, 0)?;
                Ok((mse / n as f64, grads))
            });

            let mut mean_grads = vec![F::zero(); bundle.net.param_count()];
            let scale = F::of(1.0 / batch.len() as f64);
            for result in results {
                let (loss, grads) = result?;
                epoch_loss += loss;
                for (m, g) in mean_grads.iter_mut().zip(&grads) {
                    *m += *g * scale;
                }
            }
            adam_step(bundle.net.params_mut(), &mean_grads, &mut adam)?;
        }
        history.epochs.push(EpochStats {
            loss: epoch_loss / patches.len() as f64,
            accuracy: 0.0,
        });
    }
    Ok((bundle, history))
}

/// Encodes every patch through the executor; codes come back in order.
pub fn encode_all<F: Real, E: Executor>(
    bundle: &ModelBundle<F>,
    patches: &[Tensor3<F>],
    exec: &E,
) -> Result<Vec<Vec<f64>>> {
    let results = exec.map(patches, |_, patch| {
        encode(bundle, patch).map(|code| code.iter().map(|v| v.to_f64_lossy()).collect())
    });
    results.into_iter().collect()
}

/// Picks the tissue cluster: the one with lower mean pixel luminance.
/// Near-equal luminances are refused so a human can override.
pub fn select_useful_cluster<F: Real>(
    patches: &[Tensor3<F>],
    state: &KMeansState,
) -> Result<ClusterDecision> {
    if patches.len() != state.assignments.len() {
        return Err(Error::Dimension(format!(
            "{} patches vs {} assignments",
            patches.len(),
            state.assignments.len()
        )));
    }
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (patch, &a) in patches.iter().zip(&state.assignments) {
        sums[a as usize] += patch.mean_luminance();
        counts[a as usize] += 1;
    }
    let means = [
        if counts[0] > 0 { sums[0] / counts[0] as f64 } else { f64::INFINITY },
        if counts[1] > 0 { sums[1] / counts[1] as f64 } else { f64::INFINITY },
    ];
    if counts[0] == 0 || counts[1] == 0 {
        // a single populated cluster is trivially the useful one
        let useful = usize::from(counts[0] == 0);
        return Ok(ClusterDecision {
            useful_cluster: useful,
            mean_luminance: means,
            criterion: "only populated cluster".into(),
        });
    }
    if (means[0] - means[1]).abs() < LUMINANCE_MARGIN {
        return Err(Error::AmbiguousClusters { luminance: means });
    }
    let useful = usize::from(means[1] < means[0]);
    Ok(ClusterDecision {
        useful_cluster: useful,
        mean_luminance: means,
        criterion: "lower mean luminance".into(),
    })
}
