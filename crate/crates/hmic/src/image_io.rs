//! PNG ingestion and emission. Slides and patches are 8-bit RGB; heatmaps
//! are 8-bit grayscale. Loading maps to [0,1] reals and the save/load round
//! trip reproduces 8-bit content exactly.

use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, GrayImage, ImageReader, RgbImage};

use hmic_core::Tensor3;

use crate::error::{PipelineError, Result};

/// One whole-slide image in memory.
#[derive(Debug, Clone)]
pub struct SlideImage {
    pub slide_id: String,
    pub pixels: Tensor3<f32>,
    pub source_path: PathBuf,
}

fn color_name(color: ColorType) -> &'static str {
    match color {
        ColorType::L8 => "8-bit grayscale",
        ColorType::La8 => "8-bit grayscale+alpha",
        ColorType::Rgb8 => "8-bit RGB",
        ColorType::Rgba8 => "8-bit RGBA",
        ColorType::L16 => "16-bit grayscale",
        ColorType::La16 => "16-bit grayscale+alpha",
        ColorType::Rgb16 => "16-bit RGB",
        ColorType::Rgba16 => "16-bit RGBA",
        ColorType::Rgb32F => "32-bit float RGB",
        ColorType::Rgba32F => "32-bit float RGBA",
        _ => "unknown color type",
    }
}

/// Decodes an 8-bit RGB PNG into a [0,1] tensor. Anything else (grayscale,
/// alpha, 16-bit) is a format error naming the offending layout.
pub fn load_rgb(path: &Path) -> Result<Tensor3<f32>> {
    let reader = ImageReader::open(path).map_err(|e| PipelineError::io(path, e))?;
    let decoded = reader
        .decode()
        .map_err(|e| PipelineError::format(path, format!("unreadable image: {e}")))?;
    let rgb: RgbImage = match decoded {
        DynamicImage::ImageRgb8(img) => img,
        other => {
            return Err(PipelineError::format(
                path,
                format!(
                    "expected 8-bit RGB, got {}",
                    color_name(other.color())
                ),
            ))
        }
    };
    let (w, h) = rgb.dimensions();
    let data: Vec<f32> = rgb.into_raw().iter().map(|&b| b as f32 / 255.0).collect();
    Tensor3::from_vec(h as usize, w as usize, 3, data).map_err(PipelineError::from)
}

/// Loads a slide, deriving its id from the file stem.
pub fn load_slide(path: &Path) -> Result<SlideImage> {
    let pixels = load_rgb(path)?;
    let slide_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| PipelineError::format(path, "file name is not valid UTF-8"))?
        .to_string();
    Ok(SlideImage {
        slide_id,
        pixels,
        source_path: path.to_path_buf(),
    })
}

fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes a [0,1] RGB tensor as an 8-bit PNG.
pub fn save_rgb(tensor: &Tensor3<f32>, path: &Path) -> Result<()> {
    if tensor.channels() != 3 {
        return Err(PipelineError::format(
            path,
            format!("expected 3 channels, got {}", tensor.channels()),
        ));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let bytes: Vec<u8> = tensor.data().iter().map(|&v| to_u8(v)).collect();
    let img = RgbImage::from_raw(tensor.width() as u32, tensor.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    img.save(path)
        .map_err(|e| PipelineError::format(path, format!("PNG encode failed: {e}")))?;
    Ok(())
}

/// Writes a [0,1] single-channel tensor as an 8-bit grayscale PNG.
pub fn save_gray(tensor: &Tensor3<f32>, path: &Path) -> Result<()> {
    if tensor.channels() != 1 {
        return Err(PipelineError::format(
            path,
            format!("expected 1 channel, got {}", tensor.channels()),
        ));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let bytes: Vec<u8> = tensor.data().iter().map(|&v| to_u8(v)).collect();
    let img = GrayImage::from_raw(tensor.width() as u32, tensor.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    img.save(path)
        .map_err(|e| PipelineError::format(path, format!("PNG encode failed: {e}")))?;
    Ok(())
}
