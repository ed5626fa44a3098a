//! Procedural synthetic slides with per-tile ground truth.
//!
//! Stands in for clinical data so the whole pipeline is testable: each
//! diagnosis class renders a distinct base hue and noise frequency, the
//! four severity grades share the Celiac hue but scatter dark blobs at a
//! monotonically increasing density, and a configurable fraction of tiles
//! is near-white background. Class margins (hue gaps of at least 0.1 per
//! dominant channel, density steps of 0.6 blob units) keep the classes
//! separable by construction.
//!
//! Every tile is rendered from a stream keyed on (seed, slide, row, col),
//! so output is byte-identical across runs and iteration orders.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::labels::{ChildLabel, ParentLabel, Split};
use crate::rng;
use crate::tensor::Tensor3;

/// Texture recipe for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassTexture {
    pub base_rgb: [f32; 3],
    /// Value-noise lattice cells across one tile.
    pub noise_cells: usize,
    pub noise_amplitude: f64,
    /// Blob units; the rendered count is `density * (side/32)^2`.
    pub blob_density: f64,
    pub blob_rgb: [f32; 3],
    /// Blob radius as a fraction of the tile side.
    pub blob_radius_frac: f64,
}

/// Texture for a diagnosis; severities share the Celiac hue and differ by
/// blob density only ("villus density" stand-in, monotone in severity).
pub fn texture_for(parent: ParentLabel, child: Option<ChildLabel>) -> ClassTexture {
    match parent {
        ParentLabel::Normal => ClassTexture {
            base_rgb: [0.88, 0.68, 0.76],
            noise_cells: 4,
            noise_amplitude: 0.08,
            blob_density: 0.4,
            blob_rgb: [0.62, 0.38, 0.50],
            blob_radius_frac: 0.035,
        },
        ParentLabel::EE => ClassTexture {
            base_rgb: [0.62, 0.80, 0.66],
            noise_cells: 10,
            noise_amplitude: 0.10,
            blob_density: 0.8,
            blob_rgb: [0.30, 0.48, 0.38],
            blob_radius_frac: 0.035,
        },
        ParentLabel::Celiac => {
            let density = match child {
                None | Some(ChildLabel::I) => 0.5,
                Some(ChildLabel::IIIa) => 1.1,
                Some(ChildLabel::IIIb) => 1.7,
                Some(ChildLabel::IIIc) => 2.3,
            };
            ClassTexture {
                base_rgb: [0.74, 0.58, 0.84],
                noise_cells: 7,
                noise_amplitude: 0.08,
                blob_density: density,
                blob_rgb: [0.34, 0.20, 0.46],
                blob_radius_frac: 0.04,
            }
        }
    }
}

/// Generator parameters. Parent slides cover all three diagnoses (Celiac
/// parent slides carry severities round-robin so every Celiac patch has a
/// child label); child slides add `slides_per_child_class` per severity.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub slides_per_parent_class: usize,
    pub slides_per_child_class: usize,
    /// Tiles per slide side; slides are `grid_tiles * patch_size` square.
    pub grid_tiles: usize,
    pub patch_size: usize,
    pub blank_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            slides_per_parent_class: 10,
            slides_per_child_class: 10,
            grid_tiles: 4,
            patch_size: 128,
            blank_fraction: 0.0,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 32 {
            return Err(Error::Argument(format!(
                "patch size {} too small for blob textures",
                self.patch_size
            )));
        }
        if self.grid_tiles == 0 {
            return Err(Error::Argument("grid needs at least one tile".into()));
        }
        if !(0.0..1.0).contains(&self.blank_fraction) {
            return Err(Error::Argument(format!(
                "blank fraction {} must lie in [0, 1): labeled tissue tiles are required",
                self.blank_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Argument("test fraction must lie in [0, 1)".into()));
        }
        if self.slides_per_parent_class == 0 {
            return Err(Error::Argument("need at least one slide per class".into()));
        }
        Ok(())
    }
}

/// Identity and labels of one planned slide.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidePlan {
    pub slide_id: String,
    pub label_parent: ParentLabel,
    pub label_child: Option<ChildLabel>,
    pub split: Split,
}

/// Ground truth for one tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileTruth {
    pub row: usize,
    pub col: usize,
    pub blank: bool,
}

/// A rendered slide plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSlide {
    pub plan: SlidePlan,
    pub pixels: Tensor3<f32>,
    pub tiles: Vec<TileTruth>,
}

fn split_for(index: usize, group_size: usize, test_fraction: f64) -> Split {
    let test_count = ((group_size as f64) * test_fraction).round() as usize;
    if index >= group_size - test_count.min(group_size) {
        Split::Test
    } else {
        Split::Train
    }
}

/// The full slide list implied by a spec, in a fixed order.
pub fn slide_plan(spec: &SyntheticSpec) -> Result<Vec<SlidePlan>> {
    spec.validate()?;
    let mut plans = Vec::new();
    for parent in ParentLabel::ALL {
        for i in 0..spec.slides_per_parent_class {
            let label_child = match parent {
                ParentLabel::Celiac => Some(ChildLabel::ALL[i % ChildLabel::ALL.len()]),
                _ => None,
            };
            plans.push(SlidePlan {
                slide_id: format!("p_{}_{:03}", parent.as_str(), i),
                label_parent: parent,
                label_child,
                split: split_for(i, spec.slides_per_parent_class, spec.test_fraction),
            });
        }
    }
    for child in ChildLabel::ALL {
        for i in 0..spec.slides_per_child_class {
            plans.push(SlidePlan {
                slide_id: format!("c_{}_{:03}", child.as_str(), i),
                label_parent: ParentLabel::Celiac,
                label_child: Some(child),
                split: split_for(i, spec.slides_per_child_class, spec.test_fraction),
            });
        }
    }
    Ok(plans)
}

/// Deterministic lattice hash in [-1, 1].
fn lattice_noise(seed: u64, xi: i64, yi: i64) -> f64 {
    let h = rng::derive(seed, &[xi as u64, yi as u64 ^ 0x97c3]);
    (h >> 11) as f64 / ((1u64 << 53) as f64) * 2.0 - 1.0
}

/// Bilinear value noise across a tile.
fn value_noise(seed: u64, x: f64, y: f64, cells: usize, side: usize) -> f64 {
    let spacing = side as f64 / cells as f64;
    let gx = x / spacing;
    let gy = y / spacing;
    let x0 = gx.floor() as i64;
    let y0 = gy.floor() as i64;
    let tx = gx - x0 as f64;
    let ty = gy - y0 as f64;
    let v00 = lattice_noise(seed, x0, y0);
    let v01 = lattice_noise(seed, x0 + 1, y0);
    let v10 = lattice_noise(seed, x0, y0 + 1);
    let v11 = lattice_noise(seed, x0 + 1, y0 + 1);
    let top = v00 + (v01 - v00) * tx;
    let bot = v10 + (v11 - v10) * tx;
    top + (bot - top) * ty
}

/// Renders one tissue tile of the given texture.
pub fn render_tile(texture: &ClassTexture, side: usize, tile_seed: u64) -> Tensor3<f32> {
    let mut tile = Tensor3::<f32>::zeros(side, side, 3);
    let mut stream = rng::substream(tile_seed, &[0x7117]);
    let brightness: f64 = stream.gen_range(-0.04..0.04);
    let noise_seed = rng::derive(tile_seed, &[0x4015]);

    for y in 0..side {
        for x in 0..side {
            let n = value_noise(noise_seed, x as f64, y as f64, texture.noise_cells, side)
                * texture.noise_amplitude;
            let off = (y * side + x) * 3;
            for (c, v) in tile.data_mut()[off..off + 3].iter_mut().enumerate() {
                *v = (texture.base_rgb[c] as f64 + n + brightness).clamp(0.0, 1.0) as f32;
            }
        }
    }

    let blob_count =
        (texture.blob_density * (side as f64 / 32.0) * (side as f64 / 32.0)).round() as usize;
    let radius = texture.blob_radius_frac * side as f64;
    for _ in 0..blob_count {
        let cx: f64 = stream.gen_range(radius..(side as f64 - radius));
        let cy: f64 = stream.gen_range(radius..(side as f64 - radius));
        let r: f64 = stream.gen_range(0.8 * radius..1.2 * radius);
        let r2 = r * r;
        let y_min = (cy - r).floor().max(0.0) as usize;
        let y_max = ((cy + r).ceil() as usize).min(side - 1);
        let x_min = (cx - r).floor().max(0.0) as usize;
        let x_max = ((cx + r).ceil() as usize).min(side - 1);
        for y in y_min..=y_max {
            for x in x_min..=x_max {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let d2 = dx * dx + dy * dy;
                if d2 < r2 {
                    let strength = (1.0 - d2 / r2) * 0.85;
                    let off = (y * side + x) * 3;
                    for (c, v) in tile.data_mut()[off..off + 3].iter_mut().enumerate() {
                        let blob = texture.blob_rgb[c] as f64;
                        *v = ((*v as f64) * (1.0 - strength) + blob * strength) as f32;
                    }
                }
            }
        }
    }
    tile
}

/// Near-white background tile.
pub fn render_blank_tile(side: usize, tile_seed: u64) -> Tensor3<f32> {
    let mut tile = Tensor3::<f32>::zeros(side, side, 3);
    let noise_seed = rng::derive(tile_seed, &[0xB1A2]);
    for y in 0..side {
        for x in 0..side {
            let n = value_noise(noise_seed, x as f64, y as f64, 4, side) * 0.01;
            let off = (y * side + x) * 3;
            for v in tile.data_mut()[off..off + 3].iter_mut() {
                *v = (0.975 + n).clamp(0.0, 1.0) as f32;
            }
        }
    }
    tile
}

/// Renders one planned slide; `plan_index` is its position in the plan and
/// part of the seeding path.
pub fn render_slide(
    spec: &SyntheticSpec,
    plan: &SlidePlan,
    plan_index: usize,
) -> Result<SyntheticSlide> {
    spec.validate()?;
    let tiles_per_side = spec.grid_tiles;
    let n_tiles = tiles_per_side * tiles_per_side;
    let side = spec.patch_size;
    let slide_side = tiles_per_side * side;

    // choose blank positions from a slide-level stream
    let blank_count = ((n_tiles as f64) * spec.blank_fraction).round() as usize;
    let mut positions: Vec<usize> = (0..n_tiles).collect();
    let mut slide_stream = rng::substream(spec.seed, &[0x511D, plan_index as u64]);
    use rand::seq::SliceRandom;
    positions.shuffle(&mut slide_stream);
    let blanks: alloc::collections::BTreeSet<usize> =
        positions.into_iter().take(blank_count).collect();

    let texture = texture_for(plan.label_parent, plan.label_child);
    let mut pixels = Tensor3::<f32>::zeros(slide_side, slide_side, 3);
    let mut tiles = Vec::with_capacity(n_tiles);

    for row in 0..tiles_per_side {
        for col in 0..tiles_per_side {
            let blank = blanks.contains(&(row * tiles_per_side + col));
            let tile_seed = rng::derive(
                spec.seed,
                &[0x71E5, plan_index as u64, row as u64, col as u64],
            );
            let tile = if blank {
                render_blank_tile(side, tile_seed)
            } else {
                render_tile(&texture, side, tile_seed)
            };
            // blit into the slide
            for y in 0..side {
                let src = (y * side) * 3;
                let dst = ((row * side + y) * slide_side + col * side) * 3;
                pixels.data_mut()[dst..dst + side * 3]
                    .copy_from_slice(&tile.data()[src..src + side * 3]);
            }
            tiles.push(TileTruth { row, col, blank });
        }
    }

    Ok(SyntheticSlide {
        plan: plan.clone(),
        pixels,
        tiles,
    })
}

/// Renders the whole plan into memory. Large corpora should render slide by
/// slide instead.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<Vec<SyntheticSlide>> {
    let plans = slide_plan(spec)?;
    plans
        .iter()
        .enumerate()
        .map(|(i, plan)| render_slide(spec, plan, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            slides_per_parent_class: 1,
            slides_per_child_class: 1,
            grid_tiles: 2,
            patch_size: 64,
            blank_fraction: 0.0,
            test_fraction: 0.0,
            seed: 5,
        }
    }

    #[test]
    fn zero_blank_fraction_means_every_tile_is_labeled_tissue() {
        let spec = small_spec();
        let plans = slide_plan(&spec).unwrap();
        let slide = render_slide(&spec, &plans[0], 0).unwrap();
        assert!(slide.tiles.iter().all(|t| !t.blank));
        assert_eq!(slide.tiles.len(), 4);
    }

    #[test]
    fn all_blank_spec_is_rejected() {
        let mut spec = small_spec();
        spec.blank_fraction = 1.0;
        assert!(matches!(
            slide_plan(&spec).unwrap_err(),
            Error::Argument(_)
        ));
    }

    #[test]
    fn rendering_is_byte_identical_across_runs() {
        let spec = small_spec();
        let plans = slide_plan(&spec).unwrap();
        let a = render_slide(&spec, &plans[2], 2).unwrap();
        let b = render_slide(&spec, &plans[2], 2).unwrap();
        assert_eq!(a.pixels.data(), b.pixels.data());
    }

    #[test]
    fn plan_covers_parent_and_child_groups_with_splits() {
        let spec = SyntheticSpec::default();
        let plans = slide_plan(&spec).unwrap();
        // 3 parent classes * 10 + 4 severities * 10
        assert_eq!(plans.len(), 70);
        let tests = plans.iter().filter(|p| p.split == Split::Test).count();
        assert_eq!(tests, 14); // 2 per group of 10
        // every Celiac slide carries a severity
        for p in &plans {
            if p.label_parent == ParentLabel::Celiac {
                assert!(p.label_child.is_some());
            } else {
                assert!(p.label_child.is_none());
            }
        }
    }

    #[test]
    fn blank_fraction_is_honored_per_slide() {
        let mut spec = small_spec();
        spec.grid_tiles = 4;
        spec.blank_fraction = 0.25;
        let plans = slide_plan(&spec).unwrap();
        let slide = render_slide(&spec, &plans[0], 0).unwrap();
        let blanks = slide.tiles.iter().filter(|t| t.blank).count();
        assert_eq!(blanks, 4); // 16 tiles * 0.25
    }

    #[test]
    fn blank_tiles_are_bright_and_tissue_tiles_are_not() {
        let blank = render_blank_tile(64, 1);
        assert!(blank.mean_luminance() > 0.95);
        for parent in ParentLabel::ALL {
            let tile = render_tile(&texture_for(parent, None), 64, 2);
            assert!(tile.mean_luminance() < 0.85, "{}", parent.as_str());
        }
    }

    #[test]
    fn severity_darkness_is_monotone() {
        // rising blob density must show up as falling mean luminance
        let mut previous = f64::INFINITY;
        for child in ChildLabel::ALL {
            let texture = texture_for(ParentLabel::Celiac, Some(child));
            let mut mean = 0.0;
            for seed in 0..8 {
                mean += render_tile(&texture, 96, seed).mean_luminance();
            }
            mean /= 8.0;
            assert!(
                mean < previous,
                "luminance not monotone at {}",
                child.as_str()
            );
            previous = mean;
        }
    }
}
