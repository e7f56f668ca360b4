//! Image files in and out of the engine's tensor format.
//!
//! Pixels map linearly between the 8-bit file range [0, 255] and the
//! engine's [-1, 1]; a save/load round trip is exact up to the half-step
//! quantization bound of 1/255. PNG and binary PPM are supported, chosen by
//! file extension.

use std::path::Path;

use image::RgbImage;
use peerstyle_core::data::ImageSample;
use peerstyle_core::tensor::Tensor;

use crate::{AppError, Result};

/// Decode an image file into a `[3, H, W]` sample in [-1, 1].
///
/// The class is left at 0; callers that know the image's style class set it
/// themselves. Extents must be multiples of 4 (the two stride-2 encoder
/// stages and their mirror in the decoder need that headroom).
pub fn load_image(path: &Path) -> Result<ImageSample> {
    let decoded = image::open(path)
        .map_err(|e| AppError::Runtime(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let raw = decoded.into_raw();
    let mut data = vec![0.0f64; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[c * h * w + y * w + x] = raw[(y * w + x) * 3 + c] as f64 / 255.0 * 2.0 - 1.0;
            }
        }
    }
    let pixels = Tensor::new(data, &[3, h, w]).map_err(AppError::from)?;
    ImageSample::new(pixels, 0, path.display().to_string()).map_err(AppError::from)
}

/// Encode a `[3, H, W]` or `[1, 3, H, W]` tensor to an image file, clamping
/// to [-1, 1] and quantizing to 8 bits. The format follows the extension.
pub fn save_image(pixels: &Tensor, path: &Path) -> Result<()> {
    let shape = pixels.shape();
    let (h, w) = match shape.as_slice() {
        [3, h, w] => (*h, *w),
        [1, 3, h, w] => (*h, *w),
        other => {
            return Err(AppError::Runtime(format!(
                "expected [3, h, w] or [1, 3, h, w] pixels, got {other:?}"
            )));
        }
    };
    let values = pixels.values();
    let mut raw = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = values[c * h * w + y * w + x].clamp(-1.0, 1.0);
                raw[(y * w + x) * 3 + c] = ((v + 1.0) * 127.5).round() as u8;
            }
        }
    }
    let img = RgbImage::from_raw(w as u32, h as u32, raw)
        .expect("buffer length matches dimensions");
    img.save(path)
        .map_err(|e| AppError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Bilinear resampling of a `[3, H, W]` tensor with half-pixel sample
/// centers (each output pixel reads the source at the position its center
/// maps to, clamped at the borders). Resizing to the same extents is the
/// identity.
pub fn resize_bilinear(pixels: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let shape = pixels.shape();
    let (h, w) = match shape.as_slice() {
        [3, h, w] => (*h, *w),
        other => {
            return Err(AppError::Runtime(format!(
                "expected [3, h, w] pixels to resize, got {other:?}"
            )));
        }
    };
    if out_h == 0 || out_w == 0 {
        return Err(AppError::Runtime(String::from("resize target must be positive")));
    }
    let src = pixels.values();
    let mut out = vec![0.0f64; 3 * out_h * out_w];
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for c in 0..3 {
                let plane = &src[c * h * w..(c + 1) * h * w];
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out[c * out_h * out_w + oy * out_w + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::new(out, &[3, out_h, out_w]).map_err(AppError::from)
}
