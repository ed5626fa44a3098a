//! Resampling: area-averaged downsizing for patches and bilinear upsizing
//! for heatmaps.

use crate::error::{Error, Result};

#[allow(unused_imports)]
use num_traits::Float as _;
use crate::real::Real;
use crate::tensor::Tensor3;

/// Box-filter resize: every output pixel is the exact area-weighted average
/// of the source region it covers. Fractional source boxes are handled, so
/// any size ratio works.
pub fn resize_area<F: Real>(
    input: &Tensor3<F>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor3<F>> {
    let (h, w, c) = input.shape();
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::Argument("resize dims must be positive".into()));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(input.clone());
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Tensor3::zeros(out_h, out_w, c);
    let data = input.data();

    for oy in 0..out_h {
        let y0 = oy as f64 * sy;
        let y1 = (oy + 1) as f64 * sy;
        for ox in 0..out_w {
            let x0 = ox as f64 * sx;
            let x1 = (ox + 1) as f64 * sx;
            let mut acc = alloc::vec![0.0f64; c];
            let mut area = 0.0f64;
            let mut y = y0.floor() as usize;
            while (y as f64) < y1 && y < h {
                let wy = (y1.min((y + 1) as f64) - y0.max(y as f64)).max(0.0);
                if wy > 0.0 {
                    let mut x = x0.floor() as usize;
                    while (x as f64) < x1 && x < w {
                        let wx = (x1.min((x + 1) as f64) - x0.max(x as f64)).max(0.0);
                        if wx > 0.0 {
                            let wgt = wy * wx;
                            let off = (y * w + x) * c;
                            for ch in 0..c {
                                acc[ch] += data[off + ch].to_f64_lossy() * wgt;
                            }
                            area += wgt;
                        }
                        x += 1;
                    }
                }
                y += 1;
            }
            let off = (oy * out_w + ox) * c;
            for ch in 0..c {
                out.data_mut()[off + ch] = F::of(acc[ch] / area);
            }
        }
    }
    Ok(out)
}

/// Bilinear upsizing with pixel-center alignment; used to stretch coarse
/// heatmap grids back to input resolution.
pub fn resize_bilinear<F: Real>(
    input: &Tensor3<F>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor3<F>> {
    let (h, w, c) = input.shape();
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::Argument("resize dims must be positive".into()));
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Tensor3::zeros(out_h, out_w, c);
    let data = input.data();

    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let off = (oy * out_w + ox) * c;
            for ch in 0..c {
                let v00 = data[(y0 * w + x0) * c + ch].to_f64_lossy();
                let v01 = data[(y0 * w + x1) * c + ch].to_f64_lossy();
                let v10 = data[(y1 * w + x0) * c + ch].to_f64_lossy();
                let v11 = data[(y1 * w + x1) * c + ch].to_f64_lossy();
                let top = v00 + (v01 - v00) * tx;
                let bot = v10 + (v11 - v10) * tx;
                out.data_mut()[off + ch] = F::of(top + (bot - top) * ty);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_area_downsample_averages_blocks() {
        let data: alloc::vec::Vec<f64> = (0..16).map(|v| v as f64).collect();
        let input = Tensor3::from_vec(4, 4, 1, data).unwrap();
        let out = resize_area(&input, 2, 2).unwrap();
        // top-left block {0,1,4,5} averages to 2.5
        assert!((out.at(0, 0, 0) - 2.5).abs() < 1e-12);
        assert!((out.at(1, 1, 0) - 12.5).abs() < 1e-12);
    }

    #[test]
    fn fractional_area_downsample_preserves_mean() {
        let data: alloc::vec::Vec<f64> = (0..25).map(|v| (v % 7) as f64).collect();
        let input = Tensor3::from_vec(5, 5, 1, data).unwrap();
        let out = resize_area(&input, 2, 2).unwrap();
        assert!((out.mean() - input.mean()).abs() < 1e-9);
    }

    #[test]
    fn bilinear_constant_stays_constant() {
        let input = Tensor3::filled(2, 2, 1, 3.0f64);
        let out = resize_bilinear(&input, 9, 9).unwrap();
        assert!(out.data().iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn bilinear_interpolates_between_cells() {
        let input = Tensor3::from_vec(1, 2, 1, alloc::vec![0.0f64, 1.0]).unwrap();
        let out = resize_bilinear(&input, 1, 4).unwrap();
        // monotone ramp from the left cell to the right cell
        let d = out.data();
        assert!(d[0] <= d[1] && d[1] <= d[2] && d[2] <= d[3]);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[3], 1.0);
    }
}
