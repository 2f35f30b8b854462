//! Dataset plumbing: samples with derived targets, the on-disk layout
//! (`images/`, `masks/`, `contours/`, `distances/` with matching stems),
//! and the synthetic shape generator used as the canonical desk-scale
//! dataset.

mod io;
mod synth;

pub use io::{
    load_gray16_png, load_image_png, load_mask_png, save_distance_png, save_gray_image_png,
    save_image_png, save_mask_png,
};
pub use synth::{generate as generate_synthetic, SynthConfig};

use std::path::Path;

use crate::error::{Error, Result};
use crate::targets::{
    derive_targets_with, ContourMap, DeriveOptions, DistanceMap, Mask,
};
use crate::tensor::Tensor;

/// One training example: image, class-index mask, and the derived contour
/// and distance targets.
#[derive(Clone)]
pub struct Sample {
    pub id: String,
    /// Planar [C, H, W], values in [0, 1].
    pub image: Tensor<f32>,
    pub mask: Mask,
    pub contour: ContourMap,
    pub distance: DistanceMap,
}

impl Sample {
    /// Build a sample by deriving the contour and distance targets from the
    /// mask.
    pub fn derive(id: impl Into<String>, image: Tensor<f32>, mask: Mask, options: &DeriveOptions) -> Result<Self> {
        let dims = image.shape().dims();
        if dims.len() != 3 || dims[1] != mask.height() || dims[2] != mask.width() {
            return Err(Error::Dataset(format!(
                "image shape {} does not match mask {}x{}",
                image.shape(),
                mask.width(),
                mask.height()
            )));
        }
        let (contour, distance) = derive_targets_with(&mask, options);
        Ok(Sample {
            id: id.into(),
            image,
            mask,
            contour,
            distance,
        })
    }

    pub fn with_targets(
        id: impl Into<String>,
        image: Tensor<f32>,
        mask: Mask,
        contour: ContourMap,
        distance: DistanceMap,
    ) -> Self {
        Sample {
            id: id.into(),
            image,
            mask,
            contour,
            distance,
        }
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn channels(&self) -> usize {
        self.image.shape().dims()[0]
    }
}

/// Sorted PNG stems of a directory.
pub fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// Load a dataset laid out as `images/` + `masks/` (+ optional `contours/`
/// and `distances/`). Missing derived targets are computed from the masks.
/// Every mask is validated against `num_classes`.
pub fn load_dataset(dir: &Path, num_classes: usize, options: &DeriveOptions) -> Result<Vec<Sample>> {
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    let contours_dir = dir.join("contours");
    let distances_dir = dir.join("distances");
    let stems = png_stems(&images_dir)?;
    if stems.is_empty() {
        return Err(Error::Dataset(format!(
            "no PNG images found in {}",
            images_dir.display()
        )));
    }
    let mut samples = Vec::with_capacity(stems.len());
    for stem in stems {
        let image = load_image_png(&images_dir.join(format!("{stem}.png")))?;
        let mask = load_mask_png(&masks_dir.join(format!("{stem}.png")))?;
        mask.check_classes(num_classes)
            .map_err(|e| Error::Dataset(format!("mask {stem}: {e}")))?;
        let contour_path = contours_dir.join(format!("{stem}.png"));
        let distance_path = distances_dir.join(format!("{stem}.png"));
        let sample = if contour_path.is_file() && distance_path.is_file() {
            let contour = load_mask_png(&contour_path)?;
            let contour = ContourMap::new(contour.width(), contour.height(), contour.labels().to_vec())?;
            let (w, h, pixels) = load_gray16_png(&distance_path)?;
            let distance = DistanceMap::from_u16_pixels(w, h, &pixels)?;
            Sample::with_targets(stem, image, mask, contour, distance)
        } else {
            Sample::derive(stem, image, mask, options)?
        };
        samples.push(sample);
    }
    Ok(samples)
}
