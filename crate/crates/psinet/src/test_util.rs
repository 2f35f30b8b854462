//! Small deterministic helpers shared by unit tests.

use crate::targets::{Bitmap, Mask};

/// xorshift64* stream; frozen test inputs stay stable across runs.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 ^= self.0 >> 12;
        self.0 ^= self.0 << 25;
        self.0 ^= self.0 >> 27;
        self.0.wrapping_mul(0x2545f4914f6cdd1d)
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [-1, 1).
    pub fn signed_unit(&mut self) -> f64 {
        self.unit() * 2.0 - 1.0
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.unit() * n as f64) as usize
    }

    pub fn values(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.signed_unit()).collect()
    }
}

pub fn random_bitmap(rng: &mut TestRng, width: usize, height: usize, density: f64) -> Bitmap {
    let bits = (0..width * height).map(|_| rng.unit() < density).collect();
    Bitmap::new(width, height, bits).unwrap()
}

pub fn random_mask(rng: &mut TestRng, width: usize, height: usize, num_classes: usize, density: f64) -> Mask {
    let labels = (0..width * height)
        .map(|_| {
            if rng.unit() < density {
                1 + rng.below(num_classes - 1) as u8
            } else {
                0
            }
        })
        .collect();
    Mask::new(width, height, labels).unwrap()
}

/// O(n^2) nearest-foreground search; the independent oracle for the
/// separable distance transform.
pub fn brute_force_distances(bitmap: &Bitmap) -> Vec<f64> {
    let (w, h) = (bitmap.width(), bitmap.height());
    let foreground: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| bitmap.get(y, x))
        .collect();
    if foreground.is_empty() {
        let diagonal = ((w * w + h * h) as f64).sqrt();
        return vec![diagonal; w * h];
    }
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let best = foreground
                .iter()
                .map(|&(fy, fx)| {
                    let dy = fy as f64 - y as f64;
                    let dx = fx as f64 - x as f64;
                    dy * dy + dx * dx
                })
                .fold(f64::INFINITY, f64::min);
            out[y * w + x] = best.sqrt();
        }
    }
    out
}
