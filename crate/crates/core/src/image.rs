//! Input image decoding, bilinear resizing and cropping.
//!
//! Images are `H×W×3` tensors with values in `[0, 1]`.

use std::path::Path;

use image::{DynamicImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct InputImage {
    pub id: String,
    /// `H×W×3`, values in `[0, 1]`.
    pub pixels: Tensor,
    /// `(height, width)` of the decoded file before any resize.
    pub source_dims: (usize, usize),
}

impl InputImage {
    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }
}

/// Decodes an 8-bit RGB/RGBA PNG or a P6 PPM at its native size.
pub fn decode_image(path: impl AsRef<Path>) -> Result<InputImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_image_bytes(id, &bytes)
}

pub fn decode_image_bytes(id: impl Into<String>, bytes: &[u8]) -> Result<InputImage> {
    let format = image::guess_format(bytes)
        .map_err(|_| Error::UnsupportedFormat("unrecognized image signature".into()))?;
    match format {
        ImageFormat::Png => {}
        ImageFormat::Pnm if bytes.starts_with(b"P6") => {}
        ImageFormat::Pnm => {
            return Err(Error::UnsupportedFormat(
                "only binary P6 PPM is supported".into(),
            ))
        }
        other => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
    }
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let rgb: RgbImage = match img {
        DynamicImage::ImageRgb8(i) => i,
        DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "pixel layout {:?}, need 8-bit RGB or RGBA",
                other.color()
            )))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb
        .into_raw()
        .into_iter()
        .map(|b| f32::from(b) / 255.0)
        .collect();
    Ok(InputImage {
        id: id.into(),
        pixels: Tensor::new(vec![h, w, 3], data)?,
        source_dims: (h, w),
    })
}

/// Decodes an image and resizes it to `target_hw = (height, width)`.
pub fn load_image(path: impl AsRef<Path>, target_hw: (usize, usize)) -> Result<InputImage> {
    let mut img = decode_image(path)?;
    img.pixels = resize_bilinear(&img.pixels, target_hw.0, target_hw.1)?;
    Ok(img)
}

/// Bilinear resize of an `H×W×C` tensor with half-pixel centres and edge
/// clamping. Computed in `f64`; constant images stay exactly constant.
pub fn resize_bilinear(src: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [h, w, c] = src.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!("cannot resize to {out_h}×{out_w}")));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(src.clone());
    }
    let ys = sample_positions(h, out_h);
    let xs = sample_positions(w, out_w);
    let data = src.data();
    let at = |y: usize, x: usize, ch: usize| f64::from(data[(y * w + x) * c + ch]);
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for ch in 0..c {
                let top = lerp(at(y0, x0, ch), at(y0, x1, ch), tx);
                let bottom = lerp(at(y1, x0, ch), at(y1, x1, ch), tx);
                out.push(lerp(top, bottom, ty) as f32);
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// For each output index: the two source indices and the weight of the second.
fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Copies the `w×h` window at `(x, y)` out of an `H×W×C` tensor.
pub fn crop(src: &Tensor, x: usize, y: usize, w: usize, h: usize) -> Result<Tensor> {
    let [sh, sw, c] = src.dims3()?;
    if w == 0 || h == 0 || x + w > sw || y + h > sh {
        return Err(Error::OutOfRange(format!(
            "crop {w}×{h} at ({x},{y}) outside {sw}×{sh} image"
        )));
    }
    let mut out = Vec::with_capacity(w * h * c);
    for row in y..y + h {
        let start = (row * sw + x) * c;
        out.extend_from_slice(&src.data()[start..start + w * c]);
    }
    Tensor::new(vec![h, w, c], out)
}

/// Encodes an `H×W×3` `[0,1]` tensor as an 8-bit PNG.
pub fn encode_png(pixels: &Tensor) -> Result<Vec<u8>> {
    let [h, w, c] = pixels.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!(
            "PNG export needs 3 channels, got {c}"
        )));
    }
    let raw = pixels
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size matches");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out.into_inner())
}
