//! PNG input and output. Images are `[1, C, H, W]` tensors in `[0, 1]`.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use png::{BitDepth, ColorType, Transformations};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn image_err(path: &Path, reason: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Decodes an 8- or 16-bit grayscale or RGB PNG. Alpha is dropped and
/// palettes are expanded.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (stored, keep) = match info.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => return Err(image_err(path, "palette was not expanded")),
    };
    let sample = |i: usize| -> f32 {
        match info.bit_depth {
            BitDepth::Sixteen => u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f32 / 65535.0,
            _ => buf[i] as f32 / 255.0,
        }
    };
    if !matches!(info.bit_depth, BitDepth::Eight | BitDepth::Sixteen) {
        return Err(image_err(path, format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let line = info.line_size / if info.bit_depth == BitDepth::Sixteen { 2 } else { 1 };
    Ok(Tensor::from_fn(Shape::new(1, keep, h, w), |[_, c, y, x]| {
        sample(y * line + x * stored + c)
    }))
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Depth {
    Eight,
    Sixteen,
}

/// Encodes a single image, clamping to `[0, 1]` and rounding.
pub fn encode_png(image: &Tensor, depth: Depth) -> Result<Vec<u8>> {
    let [n, c, h, w] = image.shape().0;
    if n != 1 || !(c == 1 || c == 3) {
        return Err(Error::Dimension(format!(
            "can only encode 1x1xHxW or 1x3xHxW images, got {}",
            image.shape()
        )));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(if c == 1 { ColorType::Grayscale } else { ColorType::Rgb });
        enc.set_depth(match depth {
            Depth::Eight => BitDepth::Eight,
            Depth::Sixteen => BitDepth::Sixteen,
        });
        let mut data = Vec::with_capacity(h * w * c * 2);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = image.get(0, ch, y, x).clamp(0.0, 1.0) as f64;
                    match depth {
                        Depth::Eight => data.push((v * 255.0).round() as u8),
                        Depth::Sixteen => {
                            data.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes())
                        }
                    }
                }
            }
        }
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Numerical(format!("png encoder: {e}")))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::Numerical(format!("png encoder: {e}")))?;
    }
    Ok(out)
}

pub fn save_png(path: impl AsRef<Path>, image: &Tensor, depth: Depth) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(image, depth)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// PNG files in `dir`, sorted by file name.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every PNG in `dir` as a dataset named by file stem.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let paths = list_pngs(dir)?;
    if paths.is_empty() {
        return Err(Error::Input(format!("no PNG images in {}", dir.display())));
    }
    let mut names = Vec::new();
    let mut images = Vec::new();
    for p in paths {
        names.push(file_stem(&p));
        images.push(load_png(&p)?);
    }
    Dataset::new(names, images)
}

pub fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
