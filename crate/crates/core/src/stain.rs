//! Stain-appearance harmonization.
//!
//! Two transforms, applied at different hierarchy levels: a global
//! linear+gamma color balance for the parent classifier, and stain
//! normalization via sparse non-negative factorization of optical densities
//! for the child classifier. Images are `f32` in [0,1]; the factorization
//! runs in `f64`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor3;

/// Exposure gain, 3x3 color transform, per-channel gains, and gamma, applied
/// as out = clamp((alpha * A * diag(gains) * in)^gamma, 0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ColorBalanceParams {
    pub alpha: f32,
    pub matrix: [[f32; 3]; 3],
    pub gains: [f32; 3],
    pub gamma: f32,
}

impl ColorBalanceParams {
    pub fn identity() -> Self {
        ColorBalanceParams {
            alpha: 1.0,
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            gains: [1.0, 1.0, 1.0],
            gamma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Argument(format!(
                "exposure gain {} must be positive",
                self.alpha
            )));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Argument(format!(
                "gamma {} must be positive",
                self.gamma
            )));
        }
        if self.gains.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(Error::Argument("channel gains must be positive".into()));
        }
        if self
            .matrix
            .iter()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(Error::Argument("color matrix must be finite".into()));
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        self == &ColorBalanceParams::identity()
    }
}

/// Per pixel: gains, then the color matrix, then the exposure gain; the
/// linear result is clamped at zero before the gamma exponent and the final
/// value clamped to [0,1]. Identity parameters reproduce the input exactly.
pub fn color_balance(image: &Tensor3<f32>, params: &ColorBalanceParams) -> Result<Tensor3<f32>> {
    params.validate()?;
    if image.channels() != 3 {
        return Err(Error::Dimension(format!(
            "color balance expects RGB, got {} channels",
            image.channels()
        )));
    }
    if params.is_identity() {
        return Ok(image.clone());
    }
    let mut out = image.clone();
    let gamma_is_one = params.gamma == 1.0;
    for px in out.data_mut().chunks_mut(3) {
        let gained = [
            px[0] * params.gains[0],
            px[1] * params.gains[1],
            px[2] * params.gains[2],
        ];
        for (c, row) in params.matrix.iter().enumerate() {
            let mut v =
                params.alpha * (row[0] * gained[0] + row[1] * gained[1] + row[2] * gained[2]);
            if v < 0.0 {
                v = 0.0;
            }
            if !gamma_is_one {
                v = v.powf(params.gamma);
            }
            px[c] = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Balancing strength as a percentage: a linear blend between identity
/// gains and full gray-world white balance, where each channel gain pulls
/// the channel mean toward the image's mean luminance.
pub fn cb_percent_to_params(image: &Tensor3<f32>, percent: f64) -> Result<ColorBalanceParams> {
    if !(0.0..=100.0).contains(&percent) {
        return Err(Error::Argument(format!(
            "balancing percentage {percent} outside [0, 100]"
        )));
    }
    if image.channels() != 3 || image.is_empty() {
        return Err(Error::Dimension("gray-world stats need RGB pixels".into()));
    }
    let mut channel_sum = [0.0f64; 3];
    for px in image.data().chunks(3) {
        for c in 0..3 {
            channel_sum[c] += px[c] as f64;
        }
    }
    let n = (image.len() / 3) as f64;
    let means = [channel_sum[0] / n, channel_sum[1] / n, channel_sum[2] / n];
    let luma = (means[0] + means[1] + means[2]) / 3.0;
    let weight = percent / 100.0;
    let mut gains = [1.0f32; 3];
    for c in 0..3 {
        if means[c] < 1e-6 {
            return Err(Error::Argument(format!(
                "channel {c} mean is zero; gray-world gain undefined"
            )));
        }
        gains[c] = ((1.0 - weight) + weight * (luma / means[c])) as f32;
    }
    Ok(ColorBalanceParams {
        gains,
        ..ColorBalanceParams::identity()
    })
}

// ---------------------------------------------------------------------------
// Optical density and sparse stain factorization
// ---------------------------------------------------------------------------

/// Offset keeping the log finite at zero intensity (reference intensity 1).
pub const OD_EPSILON: f64 = 1e-6;

/// Pixels with OD magnitude below this are background and excluded from
/// stain estimation.
pub const OD_BACKGROUND_THRESHOLD: f64 = 0.15;

/// Cap on pixels fed to the factorization; more are subsampled (seeded).
pub const MAX_ESTIMATION_PIXELS: usize = 20_000;

pub const SNMF_MAX_ITERATIONS: usize = 500;
pub const SNMF_RELATIVE_TOLERANCE: f64 = 1e-6;
/// Concentration sub-updates per basis update.
const H_SUBSTEPS: usize = 5;

#[inline]
pub fn rgb_to_od(v: f64) -> f64 {
    -(v + OD_EPSILON).ln()
}

#[inline]
pub fn od_to_rgb(od: f64) -> f64 {
    ((-od).exp() - OD_EPSILON).clamp(0.0, 1.0)
}

/// Column-normalized 3x2 optical-density stain basis (column 0 is the more
/// blue-absorbing, hematoxylin-like stain) plus robust per-stain maxima.
#[derive(Debug, Clone, PartialEq)]
pub struct StainProfile {
    /// `stain_matrix[channel][stain]`, channels in RGB order.
    pub stain_matrix: [[f64; 2]; 3],
    pub concentration_p99: [f64; 2],
}

impl StainProfile {
    pub fn new(stain_matrix: [[f64; 2]; 3], concentration_p99: [f64; 2]) -> Result<Self> {
        for stain in 0..2 {
            let mut norm = 0.0;
            for channel in 0..3 {
                let v = stain_matrix[channel][stain];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Argument(
                        "stain basis entries must be non-negative".into(),
                    ));
                }
                norm += v * v;
            }
            if (norm.sqrt() - 1.0).abs() > 1e-6 {
                return Err(Error::Argument(format!(
                    "stain column {stain} norm {} is not 1",
                    norm.sqrt()
                )));
            }
        }
        if concentration_p99.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Argument(
                "concentration percentiles must be non-negative".into(),
            ));
        }
        Ok(StainProfile {
            stain_matrix,
            concentration_p99,
        })
    }
}

/// Result of the alternating factorization of OD pixels into a 3x2 basis
/// and per-pixel concentrations.
#[derive(Debug, Clone, PartialEq)]
pub struct SnmfOutcome {
    pub basis: [[f64; 2]; 3],
    pub concentrations: Vec<[f64; 2]>,
    /// Penalized objective (0.5*||V-WH||^2 + lambda*sum(H)) per iteration.
    pub objective_history: Vec<f64>,
    pub relative_residual: f64,
    pub iterations: usize,
}

fn normalize_columns(w: &mut [[f64; 2]; 3]) {
    for stain in 0..2 {
        let norm =
            (w[0][stain] * w[0][stain] + w[1][stain] * w[1][stain] + w[2][stain] * w[2][stain])
                .sqrt();
        if norm > 1e-12 {
            for channel in 0..3 {
                w[channel][stain] /= norm;
            }
        }
    }
}

fn penalized_objective(pixels: &[[f64; 3]], w: &[[f64; 2]; 3], h: &[[f64; 2]], lambda: f64) -> f64 {
    let mut fit = 0.0;
    let mut l1 = 0.0;
    for (v, c) in pixels.iter().zip(h) {
        for channel in 0..3 {
            let rec = w[channel][0] * c[0] + w[channel][1] * c[1];
            let d = v[channel] - rec;
            fit += d * d;
        }
        l1 += c[0] + c[1];
    }
    0.5 * fit + lambda * l1
}

fn frobenius(pixels: &[[f64; 3]]) -> f64 {
    pixels
        .iter()
        .flat_map(|p| p.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn residual_norm(pixels: &[[f64; 3]], w: &[[f64; 2]; 3], h: &[[f64; 2]]) -> f64 {
    let mut acc = 0.0;
    for (v, c) in pixels.iter().zip(h) {
        for channel in 0..3 {
            let rec = w[channel][0] * c[0] + w[channel][1] * c[1];
            let d = v[channel] - rec;
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// Alternating multiplicative factorization with an L1 shrinkage on the
/// concentrations and unit-norm basis columns. The H step is the classic
/// sparse update (lambda joins the denominator); the W step is the
/// norm-preserving multiplicative rule for normalized bases, so the
/// penalized objective never increases across an iteration.
pub fn sparse_nmf(
    pixels: &[[f64; 3]],
    lambda: f64,
    seed: u64,
    max_iterations: usize,
) -> Result<SnmfOutcome> {
    if pixels.is_empty() {
        return Err(Error::InsufficientTissue);
    }
    if lambda < 0.0 {
        return Err(Error::Argument("sparsity penalty must be >= 0".into()));
    }

    // start the basis at the extreme blue-share deciles of the pixel cloud
    // (hematoxylin absorbs more blue than eosin), with a small seeded
    // jitter; this sits near the optimum, so the multiplicative phase
    // mostly refines
    let mut stream = rng::substream(seed, &[0x57A1]);
    let mut shares: Vec<(f64, usize)> = pixels
        .iter()
        .enumerate()
        .map(|(i, p)| (p[2] / (p[0] + p[1] + p[2]).max(1e-12), i))
        .collect();
    shares.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite OD"));
    let decile = (pixels.len() / 10).max(1);
    let mut w: [[f64; 2]; 3] = [[0.0; 2]; 3];
    for (slot, bucket) in [&shares[pixels.len() - decile..], &shares[..decile]]
        .iter()
        .enumerate()
    {
        for &(_, i) in bucket.iter() {
            for channel in 0..3 {
                w[channel][slot] += pixels[i][channel];
            }
        }
        for channel in 0..3 {
            let jitter = 1.0 + 0.02 * stream.gen_range(-1.0..1.0f64);
            w[channel][slot] = (w[channel][slot] * jitter / decile as f64).max(1e-3);
        }
    }
    normalize_columns(&mut w);

    // projection start for the concentrations, floored to keep the
    // multiplicative updates alive
    let mut h: Vec<[f64; 2]> = pixels
        .iter()
        .map(|v| {
            let mut c = [0.0f64; 2];
            for stain in 0..2 {
                let dot =
                    w[0][stain] * v[0] + w[1][stain] * v[1] + w[2][stain] * v[2];
                c[stain] = dot.max(1e-3);
            }
            c
        })
        .collect();

    let mut history = Vec::new();
    let mut prev = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iterations {
        iterations += 1;

        // H step, several shrinkage sub-updates per basis update:
        // H <- H * (W^T V) / (W^T W H + lambda)
        let mut gram = [[0.0f64; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                gram[a][b] = (0..3).map(|ch| w[ch][a] * w[ch][b]).sum();
            }
        }
        for _ in 0..H_SUBSTEPS {
            for (v, c) in pixels.iter().zip(h.iter_mut()) {
                for stain in 0..2 {
                    let wtv = w[0][stain] * v[0] + w[1][stain] * v[1] + w[2][stain] * v[2];
                    let wtwh = gram[stain][0] * c[0] + gram[stain][1] * c[1];
                    c[stain] *= wtv / (wtwh + lambda + 1e-12);
                }
            }
        }

        // W step (normalized multiplicative rule):
        // A = V H^T, B = W (H H^T)
        let mut a = [[0.0f64; 2]; 3];
        let mut hht = [[0.0f64; 2]; 2];
        for (v, c) in pixels.iter().zip(&h) {
            for stain in 0..2 {
                for channel in 0..3 {
                    a[channel][stain] += v[channel] * c[stain];
                }
                hht[stain][0] += c[stain] * c[0];
                hht[stain][1] += c[stain] * c[1];
            }
        }
        let mut b = [[0.0f64; 2]; 3];
        for channel in 0..3 {
            for stain in 0..2 {
                b[channel][stain] =
                    w[channel][0] * hht[0][stain] + w[channel][1] * hht[1][stain];
            }
        }
        for stain in 0..2 {
            let wa: f64 = (0..3).map(|ch| w[ch][stain] * a[ch][stain]).sum();
            let wb: f64 = (0..3).map(|ch| w[ch][stain] * b[ch][stain]).sum();
            for channel in 0..3 {
                let numer = a[channel][stain] + w[channel][stain] * wb;
                let denom = b[channel][stain] + w[channel][stain] * wa + 1e-12;
                w[channel][stain] *= numer / denom;
            }
        }
        normalize_columns(&mut w);

        let objective = penalized_objective(pixels, &w, &h, lambda);
        history.push(objective);
        if prev.is_finite()
            && (prev - objective).abs() <= SNMF_RELATIVE_TOLERANCE * prev.abs().max(1e-30)
        {
            converged = true;
            break;
        }
        prev = objective;
    }

    let relative_residual = residual_norm(pixels, &w, &h) / frobenius(pixels).max(1e-30);
    if !converged {
        return Err(Error::Convergence {
            residual: relative_residual,
        });
    }

    // hematoxylin-like column (more blue-absorbing, larger OD in the blue
    // channel) goes first
    if w[2][0] < w[2][1] {
        for channel in 0..3 {
            w[channel].swap(0, 1);
        }
        for c in &mut h {
            c.swap(0, 1);
        }
    }

    Ok(SnmfOutcome {
        basis: w,
        concentrations: h,
        objective_history: history,
        relative_residual,
        iterations,
    })
}

/// Exact non-negative least squares for one OD pixel against a 3x2 basis.
pub fn nnls2(basis: &[[f64; 2]; 3], od: [f64; 3]) -> [f64; 2] {
    let g01: f64 = (0..3).map(|ch| basis[ch][0] * basis[ch][1]).sum();
    let g00: f64 = (0..3).map(|ch| basis[ch][0] * basis[ch][0]).sum();
    let g11: f64 = (0..3).map(|ch| basis[ch][1] * basis[ch][1]).sum();
    let r0: f64 = (0..3).map(|ch| basis[ch][0] * od[ch]).sum();
    let r1: f64 = (0..3).map(|ch| basis[ch][1] * od[ch]).sum();

    let det = g00 * g11 - g01 * g01;
    if det > 1e-12 {
        let c0 = (g11 * r0 - g01 * r1) / det;
        let c1 = (g00 * r1 - g01 * r0) / det;
        if c0 >= 0.0 && c1 >= 0.0 {
            return [c0, c1];
        }
    }
    // active-set fallback: one stain at a time, keep the better fit
    let c0 = (r0 / g00.max(1e-12)).max(0.0);
    let c1 = (r1 / g11.max(1e-12)).max(0.0);
    let res0 = c0 * c0 * g00 - 2.0 * c0 * r0;
    let res1 = c1 * c1 * g11 - 2.0 * c1 * r1;
    if res0 <= res1 {
        [c0, 0.0]
    } else {
        [0.0, c1]
    }
}

fn od_pixels(image: &Tensor3<f32>) -> Result<Vec<[f64; 3]>> {
    if image.channels() != 3 {
        return Err(Error::Dimension(format!(
            "stain estimation expects RGB, got {} channels",
            image.channels()
        )));
    }
    let mut pixels = Vec::new();
    for px in image.data().chunks(3) {
        let od = [
            rgb_to_od(px[0] as f64),
            rgb_to_od(px[1] as f64),
            rgb_to_od(px[2] as f64),
        ];
        let magnitude = (od[0] * od[0] + od[1] * od[1] + od[2] * od[2]).sqrt();
        if magnitude >= OD_BACKGROUND_THRESHOLD {
            pixels.push(od);
        }
    }
    Ok(pixels)
}

fn percentile_99(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite concentrations"));
    let rank = ((values.len() as f64) * 0.99).ceil() as usize;
    values[rank.saturating_sub(1).min(values.len() - 1)]
}

/// Estimates the stain basis and robust concentration maxima of one image.
/// Background pixels (OD below threshold) are excluded; at most
/// `MAX_ESTIMATION_PIXELS` tissue pixels are used (seeded subsample).
pub fn estimate_stain_profile(
    image: &Tensor3<f32>,
    lambda_sparsity: f64,
    seed: u64,
) -> Result<StainProfile> {
    let mut pixels = od_pixels(image)?;
    if pixels.is_empty() {
        return Err(Error::InsufficientTissue);
    }
    if pixels.len() > MAX_ESTIMATION_PIXELS {
        let mut stream = rng::substream(seed, &[0x5B5]);
        let keep = rand::seq::index::sample(&mut stream, pixels.len(), MAX_ESTIMATION_PIXELS);
        let mut subset = Vec::with_capacity(MAX_ESTIMATION_PIXELS);
        let mut sorted: Vec<usize> = keep.into_vec();
        sorted.sort_unstable();
        for i in sorted {
            subset.push(pixels[i]);
        }
        pixels = subset;
    }

    let outcome = sparse_nmf(&pixels, lambda_sparsity, seed, SNMF_MAX_ITERATIONS)?;

    // percentiles from the same extraction used at normalization time
    let mut c0: Vec<f64> = Vec::with_capacity(pixels.len());
    let mut c1: Vec<f64> = Vec::with_capacity(pixels.len());
    for od in &pixels {
        let c = nnls2(&outcome.basis, *od);
        c0.push(c[0]);
        c1.push(c[1]);
    }
    StainProfile::new(
        outcome.basis,
        [percentile_99(&mut c0), percentile_99(&mut c1)],
    )
}

/// Maps the source image onto the target stain appearance: concentrations
/// against the source basis, scaled per stain by the percentile ratio,
/// recombined with the target basis, and mapped back to RGB.
pub fn normalize_stain(
    source: &Tensor3<f32>,
    source_profile: &StainProfile,
    target_profile: &StainProfile,
) -> Result<Tensor3<f32>> {
    if source.channels() != 3 {
        return Err(Error::Dimension(format!(
            "stain normalization expects RGB, got {} channels",
            source.channels()
        )));
    }
    for stain in 0..2 {
        if source_profile.concentration_p99[stain] <= 0.0 {
            return Err(Error::DegenerateProfile(format!(
                "source stain {stain} has zero concentration scale"
            )));
        }
    }
    let scale = [
        target_profile.concentration_p99[0] / source_profile.concentration_p99[0],
        target_profile.concentration_p99[1] / source_profile.concentration_p99[1],
    ];
    let mut out = source.clone();
    for px in out.data_mut().chunks_mut(3) {
        let od = [
            rgb_to_od(px[0] as f64),
            rgb_to_od(px[1] as f64),
            rgb_to_od(px[2] as f64),
        ];
        let c = nnls2(&source_profile.stain_matrix, od);
        let scaled = [c[0] * scale[0], c[1] * scale[1]];
        for channel in 0..3 {
            let od_out = target_profile.stain_matrix[channel][0] * scaled[0]
                + target_profile.stain_matrix[channel][1] * scaled[1];
            px[channel] = od_to_rgb(od_out) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_params_are_a_bitwise_identity() {
        let mut stream = rng::stream(4);
        let mut image = Tensor3::<f32>::zeros(8, 8, 3);
        for v in image.data_mut() {
            *v = stream.gen_range(0.0..1.0);
        }
        let out = color_balance(&image, &ColorBalanceParams::identity()).unwrap();
        assert_eq!(out.data(), image.data());
    }

    #[test]
    fn exposure_gain_worked_example() {
        let image = Tensor3::from_vec(1, 1, 3, alloc::vec![0.1f32, 0.2, 0.3]).unwrap();
        let params = ColorBalanceParams {
            alpha: 2.0,
            ..ColorBalanceParams::identity()
        };
        let out = color_balance(&image, &params).unwrap();
        assert_eq!(out.data(), &[0.2, 0.4, 0.6]);
    }

    #[test]
    fn gamma_two_squares_the_linear_stage() {
        let image = Tensor3::from_vec(1, 1, 3, alloc::vec![0.5f32, 0.5, 0.5]).unwrap();
        let params = ColorBalanceParams {
            gamma: 2.0,
            ..ColorBalanceParams::identity()
        };
        let out = color_balance(&image, &params).unwrap();
        for &v in out.data() {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let image = Tensor3::<f32>::zeros(2, 2, 3);
        let mut params = ColorBalanceParams::identity();
        params.alpha = 0.0;
        assert!(matches!(
            color_balance(&image, &params).unwrap_err(),
            Error::Argument(_)
        ));
    }

    #[test]
    fn monotone_in_alpha_before_clamping() {
        let image = Tensor3::from_vec(1, 1, 3, alloc::vec![0.2f32, 0.3, 0.1]).unwrap();
        let mut prev = [0.0f32; 3];
        for (i, alpha) in [0.5f32, 1.0, 1.5, 2.0].iter().enumerate() {
            let params = ColorBalanceParams {
                alpha: *alpha,
                ..ColorBalanceParams::identity()
            };
            let out = color_balance(&image, &params).unwrap();
            if i > 0 {
                for (a, &b) in prev.iter().zip(out.data()) {
                    assert!(b >= *a);
                }
            }
            prev.copy_from_slice(out.data());
        }
    }

    #[test]
    fn percent_blend_endpoints_and_midpoint() {
        // constant image with channel means (0.5, 0.25, 0.25)
        let mut image = Tensor3::<f32>::zeros(4, 4, 3);
        for px in image.data_mut().chunks_mut(3) {
            px.copy_from_slice(&[0.5, 0.25, 0.25]);
        }
        let p0 = cb_percent_to_params(&image, 0.0).unwrap();
        assert_eq!(p0, ColorBalanceParams::identity());

        let p100 = cb_percent_to_params(&image, 100.0).unwrap();
        assert!((p100.gains[0] - 2.0 / 3.0).abs() < 1e-6);
        assert!((p100.gains[1] - 4.0 / 3.0).abs() < 1e-6);
        assert!((p100.gains[2] - 4.0 / 3.0).abs() < 1e-6);

        let p50 = cb_percent_to_params(&image, 50.0).unwrap();
        for c in 0..3 {
            let mid = 0.5 * (1.0 + p100.gains[c]);
            assert!((p50.gains[c] - mid).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_percent_is_rejected() {
        let image = Tensor3::<f32>::zeros(2, 2, 3);
        assert!(cb_percent_to_params(&image, -1.0).is_err());
        assert!(cb_percent_to_params(&image, 101.0).is_err());
    }

    fn synthetic_two_stain_image(
        basis: &[[f64; 2]; 3],
        side: usize,
        seed: u64,
    ) -> (Tensor3<f32>, Vec<[f64; 2]>) {
        let mut stream = rng::stream(seed);
        let mut image = Tensor3::<f32>::zeros(side, side, 3);
        let mut concentrations = Vec::new();
        for px in image.data_mut().chunks_mut(3) {
            let c = [stream.gen_range(0.2..1.6), stream.gen_range(0.2..1.2)];
            for channel in 0..3 {
                let od = basis[channel][0] * c[0] + basis[channel][1] * c[1];
                px[channel] = od_to_rgb(od) as f32;
            }
            concentrations.push(c);
        }
        (image, concentrations)
    }

    fn unit(v: [f64; 3]) -> [f64; 3] {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    }

    fn hema_eosin() -> [[f64; 2]; 3] {
        // textbook H&E optical-density vectors
        let h = unit([0.65, 0.70, 0.29]);
        let e = unit([0.07, 0.99, 0.11]);
        [[h[0], e[0]], [h[1], e[1]], [h[2], e[2]]]
    }

    #[test]
    fn single_stain_recovery_within_five_degrees() {
        let h = unit([0.65, 0.70, 0.29]);
        let mut stream = rng::stream(8);
        let mut image = Tensor3::<f32>::zeros(32, 32, 3);
        for px in image.data_mut().chunks_mut(3) {
            let c: f64 = stream.gen_range(0.3..1.8);
            for channel in 0..3 {
                px[channel] = od_to_rgb(h[channel] * c) as f32;
            }
        }
        let profile = estimate_stain_profile(&image, 0.1, 0).unwrap();
        // dominant = larger concentration scale
        let dominant = usize::from(profile.concentration_p99[1] > profile.concentration_p99[0]);
        let col = [
            profile.stain_matrix[0][dominant],
            profile.stain_matrix[1][dominant],
            profile.stain_matrix[2][dominant],
        ];
        let cosine = col[0] * h[0] + col[1] * h[1] + col[2] * h[2];
        let angle = cosine.clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle < 5.0, "angular error {angle} degrees");
    }

    #[test]
    fn two_stain_mixture_reconstructs_well() {
        let basis = hema_eosin();
        let (image, _) = synthetic_two_stain_image(&basis, 48, 3);
        let pixels = od_pixels(&image).unwrap();
        let outcome = sparse_nmf(&pixels, 0.1, 0, SNMF_MAX_ITERATIONS).unwrap();
        assert!(
            outcome.relative_residual < 0.10,
            "relative residual {}",
            outcome.relative_residual
        );
        for w in outcome.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
        }
        // unit-norm non-negative columns
        for stain in 0..2 {
            let n: f64 = (0..3)
                .map(|ch| outcome.basis[ch][stain] * outcome.basis[ch][stain])
                .sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-6);
            assert!((0..3).all(|ch| outcome.basis[ch][stain] >= 0.0));
        }
    }

    #[test]
    fn self_normalization_is_nearly_identity() {
        let basis = hema_eosin();
        let (image, _) = synthetic_two_stain_image(&basis, 48, 5);
        let profile = estimate_stain_profile(&image, 0.1, 1).unwrap();
        let out = normalize_stain(&image, &profile, &profile).unwrap();
        let mut mae = 0.0f64;
        for (&a, &b) in out.data().iter().zip(image.data()) {
            mae += (a as f64 - b as f64).abs();
        }
        mae /= image.len() as f64;
        assert!(mae < 0.02, "self-normalization MAE {mae}");
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn profile_swap_recovers_the_other_image() {
        let basis_a = hema_eosin();
        // a shifted appearance of the same tissue
        let h2 = unit([0.55, 0.75, 0.35]);
        let e2 = unit([0.15, 0.92, 0.20]);
        let basis_b = [[h2[0], e2[0]], [h2[1], e2[1]], [h2[2], e2[2]]];

        let (image_a, _) = synthetic_two_stain_image(&basis_a, 48, 9);
        // same concentrations, different basis
        let mut image_b = Tensor3::<f32>::zeros(48, 48, 3);
        let (_, concentrations) = synthetic_two_stain_image(&basis_a, 48, 9);
        for (px, c) in image_b.data_mut().chunks_mut(3).zip(&concentrations) {
            for channel in 0..3 {
                let od = basis_b[channel][0] * c[0] + basis_b[channel][1] * c[1];
                px[channel] = od_to_rgb(od) as f32;
            }
        }

        let profile_a = estimate_stain_profile(&image_a, 0.1, 2).unwrap();
        let profile_b = estimate_stain_profile(&image_b, 0.1, 2).unwrap();
        let mapped = normalize_stain(&image_a, &profile_a, &profile_b).unwrap();
        let mut mae = 0.0f64;
        for (&a, &b) in mapped.data().iter().zip(image_b.data()) {
            mae += (a as f64 - b as f64).abs();
        }
        mae /= mapped.len() as f64;
        assert!(mae < 0.05, "profile-swap MAE {mae}");
    }

    #[test]
    fn all_background_image_is_insufficient_tissue() {
        let image = Tensor3::filled(16, 16, 3, 0.99f32);
        assert!(matches!(
            estimate_stain_profile(&image, 0.1, 0).unwrap_err(),
            Error::InsufficientTissue
        ));
    }

    #[test]
    fn zero_source_percentile_is_degenerate() {
        let basis = hema_eosin();
        let profile_ok = StainProfile::new(basis, [1.0, 1.0]).unwrap();
        let profile_zero = StainProfile::new(basis, [0.0, 1.0]).unwrap();
        let image = Tensor3::filled(4, 4, 3, 0.5f32);
        assert!(matches!(
            normalize_stain(&image, &profile_zero, &profile_ok).unwrap_err(),
            Error::DegenerateProfile(_)
        ));
    }

    #[test]
    fn nnls_matches_exact_solution_on_clean_mixtures() {
        let basis = hema_eosin();
        let truth = [0.8f64, 0.4];
        let od = [
            basis[0][0] * truth[0] + basis[0][1] * truth[1],
            basis[1][0] * truth[0] + basis[1][1] * truth[1],
            basis[2][0] * truth[0] + basis[2][1] * truth[1],
        ];
        let c = nnls2(&basis, od);
        assert!((c[0] - truth[0]).abs() < 1e-9);
        assert!((c[1] - truth[1]).abs() < 1e-9);
    }
}
