//! Ground-truth derivation and image preprocessing.
//!
//! Segmentation datasets ship masks only; the contour and distance targets
//! the auxiliary decoders train against are derived here: per-class
//! boundaries dilated with a Euclidean disk for the contour map, and a
//! normalized exact Euclidean distance transform of the foreground for the
//! distance map.

mod edt;
mod morph;


pub use edt::{distance_transform, distance_transform_sq};
pub use morph::{connected_components, dilate_disk, extract_boundary, ComponentMap};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary image, row-major.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Bitmap {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::shape(
                "bitmap",
                format!("{}x{} needs {} pixels, got {}", width, height, width * height, bits.len()),
            ));
        }
        Ok(Bitmap { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Bitmap {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }
}

/// Per-pixel class indices; class 0 is background.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Mask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape(
                "mask",
                format!("{}x{} needs {} pixels, got {}", width, height, width * height, labels.len()),
            ));
        }
        Ok(Mask { width, height, labels })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
    pub fn label(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }
    pub fn set_label(&mut self, y: usize, x: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Validate that every label is below `num_classes`.
    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        if let Some(&bad) = self.labels.iter().find(|&&l| (l as usize) >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes,
            });
        }
        Ok(())
    }

    /// Binary image of one class.
    pub fn class_bitmap(&self, class: u8) -> Bitmap {
        Bitmap {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l == class).collect(),
        }
    }

    /// Binary image of all non-background pixels.
    pub fn foreground_bitmap(&self) -> Bitmap {
        Bitmap {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l != 0).collect(),
        }
    }
}

/// Per-pixel contour class indices (0 = not on any contour). Contour pixels
/// of class c lie within the dilation radius of a class-c region boundary.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ContourMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl ContourMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape(
                "contour map",
                format!("{}x{} needs {} pixels, got {}", width, height, width * height, labels.len()),
            ));
        }
        Ok(ContourMap { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
    pub fn label(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn as_mask(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            labels: self.labels.clone(),
        }
    }
}

/// Distance-to-foreground map normalized into [0, 1]: exactly zero on
/// foreground pixels, increasing with distance from the region.
#[derive(Clone, PartialEq, Debug)]
pub struct DistanceMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DistanceMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(
                "distance map",
                format!("{}x{} needs {} pixels, got {}", width, height, width * height, values.len()),
            ));
        }
        Ok(DistanceMap { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }
    pub fn value(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Fixed-point file encoding: round(value * 65535) per pixel.
    pub fn to_u16_pixels(&self) -> Vec<u16> {
        self.values
            .iter()
            .map(|&v| (f64::from(v) * 65535.0).round().clamp(0.0, 65535.0) as u16)
            .collect()
    }

    pub fn from_u16_pixels(width: usize, height: usize, pixels: &[u16]) -> Result<Self> {
        let values = pixels.iter().map(|&p| p as f32 / 65535.0).collect();
        DistanceMap::new(width, height, values)
    }
}

/// How raw distances are squeezed into the sigmoid-bounded range.
#[derive(Clone, Copy, PartialEq, Debug)]
pub enum Normalization {
    /// Divide by the map's maximum (all-zero maps pass through unchanged).
    PerImageMax,
    /// Divide by a fixed value, clamping results into [0, 1].
    FixedDivisor(f64),
}

#[derive(Clone, PartialEq, Debug)]
pub struct DeriveOptions {
    /// Euclidean radius of the boundary dilation disk.
    pub contour_radius: f64,
    pub normalization: Normalization,
}

impl Default for DeriveOptions {
    fn default() -> Self {
        DeriveOptions {
            contour_radius: 5.0,
            normalization: Normalization::PerImageMax,
        }
    }
}

/// Scale a raw distance map into [0, 1].
pub fn normalize_distance(width: usize, height: usize, raw: &[f64], mode: Normalization) -> Result<DistanceMap> {
    let values: Vec<f32> = match mode {
        Normalization::PerImageMax => {
            let max = raw.iter().cloned().fold(0.0f64, f64::max);
            if max > 0.0 {
                raw.iter().map(|&v| (v / max) as f32).collect()
            } else {
                raw.iter().map(|&v| v as f32).collect()
            }
        }
        Normalization::FixedDivisor(d) => {
            if d <= 0.0 {
                return Err(Error::arg("normalize_distance", "divisor must be positive"));
            }
            raw.iter().map(|&v| (v / d).clamp(0.0, 1.0) as f32).collect()
        }
    };
    DistanceMap::new(width, height, values)
}

/// Derive the contour and distance targets from a segmentation mask.
///
/// Per non-background class the region boundary is extracted and dilated
/// with a Euclidean disk; classes are composited with the higher index
/// winning on overlap. The distance map is the normalized distance
/// transform of the union of all non-background pixels.
pub fn derive_targets(mask: &Mask) -> (ContourMap, DistanceMap) {
    derive_targets_with(mask, &DeriveOptions::default())
}

pub fn derive_targets_with(mask: &Mask, options: &DeriveOptions) -> (ContourMap, DistanceMap) {
    let (w, h) = (mask.width(), mask.height());
    let mut contour = vec![0u8; w * h];
    for class in 1..=mask.max_label() {
        let bitmap = mask.class_bitmap(class);
        if !bitmap.any() {
            continue;
        }
        let boundary = extract_boundary(&bitmap);
        let band = dilate_disk(&boundary, options.contour_radius);
        for (c, &b) in contour.iter_mut().zip(band.bits()) {
            if b {
                *c = class;
            }
        }
    }
    let contour = ContourMap::new(w, h, contour).expect("same dimensions");

    let raw = distance_transform(&mask.foreground_bitmap());
    let distance =
        normalize_distance(w, h, &raw, options.normalization).expect("same dimensions");
    (contour, distance)
}

/// Center crop to the largest centered square, then bilinear-resize a
/// planar [C, H, W] image to the target size.
pub fn preprocess_image(image: &Tensor<f32>, target_h: usize, target_w: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = chw(image)?;
    let side = h.min(w);
    let y0 = (h - side) / 2;
    let x0 = (w - side) / 2;
    let mut cropped = Vec::with_capacity(c * side * side);
    for ch in 0..c {
        for y in 0..side {
            let row = (ch * h + y0 + y) * w + x0;
            cropped.extend_from_slice(&image.data()[row..row + side]);
        }
    }
    let cropped = Tensor::new([c, side, side], cropped)?;
    if side == target_h && side == target_w {
        return Ok(cropped);
    }
    resize_bilinear(&cropped, target_h, target_w)
}

/// Center crop + nearest-neighbor resize for class-index masks, so no new
/// class values are introduced.
pub fn preprocess_mask(mask: &Mask, target_h: usize, target_w: usize) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    let side = h.min(w);
    let y0 = (h - side) / 2;
    let x0 = (w - side) / 2;
    let mut cropped = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            cropped.push(mask.label(y0 + y, x0 + x));
        }
    }
    let cropped = Mask::new(side, side, cropped).expect("crop arithmetic");
    if side == target_h && side == target_w {
        return cropped;
    }
    resize_nearest(&cropped, target_h, target_w)
}

fn chw(image: &Tensor<f32>) -> Result<[usize; 3]> {
    match image.shape().dims() {
        &[c, h, w] => Ok([c, h, w]),
        other => Err(Error::shape(
            "image",
            format!("expected [C, H, W], got {:?}", other),
        )),
    }
}

/// Bilinear resize with half-pixel centers and clamped edges.
pub fn resize_bilinear(image: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = chw(image)?;
    let taps = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f32, f32)> {
        (0..out_len)
            .map(|o| {
                let src = (o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
                let i0 = src.floor();
                let frac = src - i0;
                let lo = (i0.max(0.0) as usize).min(in_len - 1);
                let hi = ((i0 + 1.0).max(0.0) as usize).min(in_len - 1);
                (lo, hi, (1.0 - frac) as f32, frac as f32)
            })
            .collect()
    };
    let ty = taps(out_h, h);
    let tx = taps(out_w, w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, wy0, wy1) in &ty {
            for &(x0, x1, wx0, wx1) in &tx {
                let v = wy0 * (wx0 * plane[y0 * w + x0] + wx1 * plane[y0 * w + x1])
                    + wy1 * (wx0 * plane[y1 * w + x0] + wx1 * plane[y1 * w + x1]);
                out.push(v);
            }
        }
    }
    Tensor::new([c, out_h, out_w], out)
}

/// Nearest-neighbor resize for class-index masks.
pub fn resize_nearest(mask: &Mask, out_h: usize, out_w: usize) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    let pick = |o: usize, out_len: usize, in_len: usize| -> usize {
        let src = (o as f64 + 0.5) * in_len as f64 / out_len as f64;
        (src.floor() as usize).min(in_len - 1)
    };
    let mut labels = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let sy = pick(y, out_h, h);
        for x in 0..out_w {
            labels.push(mask.label(sy, pick(x, out_w, w)));
        }
    }
    Mask::new(out_w, out_h, labels).expect("resize arithmetic")
}
