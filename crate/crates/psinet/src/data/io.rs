//! PNG encode/decode for the dataset file formats: 8-bit gray class-index
//! masks and contours, 16-bit gray fixed-point distance maps, and 8-bit
//! gray or RGB images.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::targets::{DistanceMap, Mask};
use crate::tensor::Tensor;

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Load an image as planar [C, H, W] with values in [0, 1]; C is 1 for
/// grayscale files and 3 otherwise.
pub fn load_image_png(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?;
    match img {
        DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            let data: Vec<f32> = gray.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
            Tensor::new([1, h as usize, w as usize], data)
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let plane = (w * h) as usize;
            let mut data = vec![0f32; 3 * plane];
            for (i, p) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    data[c * plane + i] = p.0[c] as f32 / 255.0;
                }
            }
            Tensor::new([3, h as usize, w as usize], data)
        }
    }
}

/// Write a [C, H, W] image with values in [0, 1] as 8-bit gray (C = 1) or
/// RGB (C = 3) PNG.
pub fn save_image_png(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let dims = image.shape().dims().to_vec();
    let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let err = |e: image::ImageError| Error::Image {
        path: path.to_path_buf(),
        source: e,
    };
    match dims.as_slice() {
        &[1, h, w] => {
            let buf: Vec<u8> = image.data().iter().map(|&v| to_u8(v)).collect();
            let img: GrayImage = ImageBuffer::from_vec(w as u32, h as u32, buf)
                .expect("buffer length matches dimensions");
            img.save(path).map_err(err)
        }
        &[3, h, w] => {
            let plane = h * w;
            let mut buf = vec![0u8; 3 * plane];
            for i in 0..plane {
                for c in 0..3 {
                    buf[i * 3 + c] = to_u8(image.data()[c * plane + i]);
                }
            }
            let img: ImageBuffer<Rgb<u8>, Vec<u8>> =
                ImageBuffer::from_vec(w as u32, h as u32, buf)
                    .expect("buffer length matches dimensions");
            img.save(path).map_err(err)
        }
        other => Err(Error::shape(
            "save_image_png",
            format!("expected [1|3, H, W], got {:?}", other),
        )),
    }
}

/// Convenience for single-channel images held as flat [H*W] slices.
pub fn save_gray_image_png(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    let tensor = Tensor::new([1, height, width], values.to_vec())?;
    save_image_png(path, &tensor)
}

/// Load an 8-bit single-channel PNG where pixel value = class index.
pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = open(path)?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => other.to_luma8(),
    };
    let (w, h) = gray.dimensions();
    Mask::new(w as usize, h as usize, gray.into_raw())
}

/// Write a class-index map (mask or contour labels) as 8-bit gray PNG.
pub fn save_mask_png(path: &Path, width: usize, height: usize, labels: &[u8]) -> Result<()> {
    let img: GrayImage = ImageBuffer::from_vec(width as u32, height as u32, labels.to_vec())
        .ok_or_else(|| Error::shape("save_mask_png", "label buffer does not match dimensions"))?;
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Write a distance map as 16-bit gray PNG storing round(value * 65535).
pub fn save_distance_png(path: &Path, map: &DistanceMap) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_vec(
        map.width() as u32,
        map.height() as u32,
        map.to_u16_pixels(),
    )
    .expect("pixel count matches dimensions");
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Load a 16-bit gray PNG as raw u16 pixels.
pub fn load_gray16_png(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = open(path)?;
    let gray = img.to_luma16();
    let (w, h) = gray.dimensions();
    Ok((w as usize, h as usize, gray.into_raw()))
}
