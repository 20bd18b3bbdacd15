use image::imageops::{self, FilterType};
use image::{Rgb, Rgb32FImage, RgbImage};

use super::EmbedderConfig;
use crate::error::{Error, Result};
use crate::types::{ImageTensor, CHANNELS};

/// 8-bit RGB to a `[0, 1]` tensor at the original resolution.
pub fn rgb_to_tensor(raw: &RgbImage) -> Result<ImageTensor> {
    let (w, h) = raw.dimensions();
    ImageTensor::from_fn(h as usize, w as usize, |c, y, x| {
        raw.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    })
}

/// Rounds and clamps a tensor back to 8-bit RGB.
pub fn tensor_to_rgb(x: &ImageTensor) -> RgbImage {
    RgbImage::from_fn(x.width() as u32, x.height() as u32, |px, py| {
        let (px, py) = (px as usize, py as usize);
        Rgb(std::array::from_fn(|c| {
            (x.get(c, py, px).clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    })
}

/// Decoded 8-bit image to a model-ready `[0, 1]` tensor (resize + center crop).
pub fn preprocess(raw: &RgbImage, config: &EmbedderConfig) -> Result<ImageTensor> {
    preprocess_tensor(&rgb_to_tensor(raw)?, config)
}

/// Resizes the shorter side to `resize_short_side` (anti-aliased bilinear)
/// and center-crops `input_size` x `input_size`. Normalization is left to the
/// embedder.
pub fn preprocess_tensor(x: &ImageTensor, config: &EmbedderConfig) -> Result<ImageTensor> {
    let (w, h) = (x.width(), x.height());
    let target = config.resize_short_side;
    let crop = config.input_size;

    let (rw, rh) = if w <= h {
        (target, scaled_side(h, target, w))
    } else {
        (scaled_side(w, target, h), target)
    };
    if rw < crop || rh < crop {
        return Err(Error::ImageTooSmall {
            width: w as u32,
            height: h as u32,
            crop: crop as u32,
        });
    }

    let resized = if (rw, rh) == (w, h) {
        x.clone()
    } else {
        resize(x, rw, rh)?
    };
    let left = (rw - crop) / 2;
    let top = (rh - crop) / 2;
    if (left, top, crop, crop) == (0, 0, rw, rh) {
        return Ok(resized);
    }
    ImageTensor::from_fn(crop, crop, |c, y, xx| resized.get(c, y + top, xx + left))
}

fn scaled_side(long: usize, target: usize, short: usize) -> usize {
    ((long as f64 * target as f64 / short as f64).round() as usize).max(1)
}

fn resize(x: &ImageTensor, width: usize, height: usize) -> Result<ImageTensor> {
    let src = Rgb32FImage::from_fn(x.width() as u32, x.height() as u32, |px, py| {
        Rgb(std::array::from_fn(|c| x.get(c, py as usize, px as usize)))
    });
    let out = imageops::resize(&src, width as u32, height as u32, FilterType::Triangle);
    let mut data = vec![0.0f32; CHANNELS * width * height];
    let plane = width * height;
    for (px, py, p) in out.enumerate_pixels() {
        let idx = py as usize * width + px as usize;
        for c in 0..CHANNELS {
            data[c * plane + idx] = p[c];
        }
    }
    ImageTensor::new(height, width, data)
}
