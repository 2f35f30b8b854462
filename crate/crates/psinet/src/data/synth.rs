//! Synthetic shape dataset: grayscale images of randomly placed filled
//! ellipses over a noisy background, with exact masks. Instances are kept
//! Euclidean-separated so the component count always equals the instance
//! count, which multi-instance evaluations rely on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::targets::{dilate_disk, Bitmap, Mask};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub count: usize,
    /// Square image side length.
    pub size: usize,
    /// Inclusive range of ellipse instances per image.
    pub instances: (usize, usize),
    pub seed: u64,
    /// Amplitude of the additive uniform noise.
    pub noise: f64,
}

impl SynthConfig {
    pub fn new(count: usize, size: usize, instances: (usize, usize), seed: u64) -> Self {
        SynthConfig {
            count,
            size,
            instances,
            seed,
            noise: 0.05,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::arg("synth", "count must be at least 1"));
        }
        if self.size < 16 {
            return Err(Error::arg("synth", "size must be at least 16"));
        }
        let (lo, hi) = self.instances;
        if lo == 0 || lo > hi {
            return Err(Error::arg("synth", "instance range must satisfy 1 <= lo <= hi"));
        }
        Ok(())
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f64 - self.cy;
        let dx = x as f64 - self.cx;
        let (sin, cos) = self.theta.sin_cos();
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    fn rasterize(&self, size: usize) -> Bitmap {
        let mut bits = vec![false; size * size];
        for y in 0..size {
            for x in 0..size {
                bits[y * size + x] = self.contains(y, x);
            }
        }
        Bitmap::new(size, size, bits).expect("square raster")
    }
}

/// Generate `count` (image, mask) pairs. The same config always produces
/// the same data.
pub fn generate(config: &SynthConfig) -> Result<Vec<(Tensor<f32>, Mask)>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.count);
    for index in 0..config.count {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(index as u64));
        out.push(generate_one(config, &mut rng, index)?);
    }
    Ok(out)
}

fn generate_one(
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
    index: usize,
) -> Result<(Tensor<f32>, Mask)> {
    let size = config.size;
    let (lo, hi) = config.instances;
    let wanted = rng.gen_range(lo..=hi);
    let mut occupied = vec![false; size * size];
    let mut placed = 0usize;

    // Separation of 2 pixels keeps instances 8-disconnected from each other.
    let mut blocked = Bitmap::empty(size, size);
    let mut scale = 1.0f64;
    let mut attempts = 0usize;
    while placed < wanted {
        attempts += 1;
        if attempts > 500 {
            return Err(Error::arg(
                "synth",
                format!("could not place {wanted} separated instances on a {size}x{size} image (sample {index})"),
            ));
        }
        if attempts.is_multiple_of(25) {
            scale *= 0.85;
        }
        let max_r = (size as f64 / (2.5 + 1.5 * wanted as f64)).max(3.0) * scale;
        let a = rng.gen_range(0.55 * max_r..=max_r).max(1.5);
        let b = rng.gen_range(0.55 * max_r..=max_r).max(1.5);
        let margin = a.max(b) + 2.0;
        if 2.0 * margin >= size as f64 {
            continue;
        }
        let shape = Ellipse {
            cy: rng.gen_range(margin..=size as f64 - margin),
            cx: rng.gen_range(margin..=size as f64 - margin),
            a,
            b,
            theta: rng.gen_range(0.0..std::f64::consts::PI),
        };
        let raster = shape.rasterize(size);
        if !raster.any() {
            continue;
        }
        if raster.bits().iter().zip(blocked.bits()).any(|(r, b)| *r && *b) {
            continue;
        }
        for (o, r) in occupied.iter_mut().zip(raster.bits()) {
            *o = *o || *r;
        }
        blocked = dilate_disk(&Bitmap::new(size, size, occupied.clone())?, 2.0);
        placed += 1;
    }

    let labels: Vec<u8> = occupied.iter().map(|&b| u8::from(b)).collect();
    let mask = Mask::new(size, size, labels)?;

    let background = 0.12 + rng.gen::<f64>() * 0.08;
    let foreground = 0.6 + rng.gen::<f64>() * 0.3;
    let mut pixels = Vec::with_capacity(size * size);
    for &fg in &occupied {
        let base = if fg { foreground } else { background };
        let noise = (rng.gen::<f64>() * 2.0 - 1.0) * config.noise;
        pixels.push((base + noise).clamp(0.0, 1.0) as f32);
    }
    let image = Tensor::new([1, size, size], pixels)?;
    Ok((image, mask))
}
