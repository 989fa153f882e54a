//! 8-bit RGB image files <-> 3×H×W tensors in [0, 1].

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Nearest 8-bit level, halves rounded up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn from_rgb8(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f64 / 255.0
    })
}

pub fn to_rgb8(t: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::InvalidArgument(format!("expected 3 channels, got {:?}", t.shape())));
    }
    let mut raw = vec![0u8; 3 * h * w];
    for (i, v) in t.data().iter().enumerate() {
        let (ch, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + ch] = quantize(*v);
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized from dims"))
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    Ok(from_rgb8(&img.to_rgb8()))
}

/// Format follows the extension (`.png`, `.ppm`).
pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    to_rgb8(image)?.save(path).map_err(|e| image_error(path, e))
}

/// Writes channel `channel` of a C×H×W map as an 8-bit grayscale image.
pub fn write_gray(path: &Path, map: &Tensor, channel: usize) -> Result<()> {
    let (c, h, w) = map.dims3()?;
    if channel >= c {
        return Err(Error::InvalidArgument(format!("channel {channel} of {:?}", map.shape())));
    }
    let plane = &map.data()[channel * h * w..(channel + 1) * h * w];
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([quantize(plane[y as usize * w + x as usize])])
    });
    img.save(path).map_err(|e| image_error(path, e))
}

/// Frame extents `(width, height)` read from the file header only.
pub fn image_dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| image_error(path, e))?;
    Ok((w as usize, h as usize))
}

/// Bilinear (triangle filter) resize of a 3×H×W tensor.
pub fn resize(t: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (c, h, w) = t.dims3()?;
    if c != 3 || height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot resize {:?} to {height}x{width}",
            t.shape()
        )));
    }
    let src: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        Rgb([0, 1, 2].map(|ch| t.data()[ch * h * w + p] as f32))
    });
    let dst = imageops::resize(&src, width as u32, height as u32, FilterType::Triangle);
    Ok(Tensor::from_fn(&[3, height, width], |i| {
        let (ch, p) = (i / (height * width), i % (height * width));
        let px = dst.get_pixel((p % width) as u32, (p / width) as u32);
        (px.0[ch] as f64).clamp(0.0, 1.0)
    }))
}
