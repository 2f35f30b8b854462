//! Exact Euclidean distance transform via the two-pass separable
//! lower-envelope algorithm (one 1-D parabola sweep per column, then per
//! row). Squared distances are exact integers in f64, so results match a
//! brute-force nearest-foreground search bit for bit.

use super::Bitmap;

/// Squared distances are capped by the image diagonal, so this stands in
/// for infinity without the NaN hazards of `f64::INFINITY` arithmetic.
fn big(width: usize, height: usize) -> f64 {
    ((width * width + height * height) as f64) + 1.0
}

/// 1-D squared-distance transform of the sampled function `f`, written to
/// `out`. `v` and `z` are caller-provided scratch.
fn transform_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::MIN;
    z[1] = f64::MAX;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * (q - p)) as f64;
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::MAX;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest
/// foreground pixel (zero on foreground). Returns `None` when the bitmap
/// has no foreground at all.
pub fn distance_transform_sq(bitmap: &Bitmap) -> Option<Vec<f64>> {
    if !bitmap.bits().iter().any(|&b| b) {
        return None;
    }
    let (w, h) = (bitmap.width(), bitmap.height());
    let inf = big(w, h);
    let mut grid = vec![0.0f64; w * h];
    for (g, &b) in grid.iter_mut().zip(bitmap.bits()) {
        *g = if b { 0.0 } else { inf };
    }

    let n = w.max(h);
    let mut f = vec![0.0f64; n];
    let mut out = vec![0.0f64; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];

    // Columns first, then rows.
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        transform_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        transform_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    Some(grid)
}

/// Euclidean distance from every pixel to the nearest foreground pixel.
/// Foreground pixels map to zero. When the bitmap has no foreground every
/// pixel takes the sentinel value: the image diagonal length.
pub fn distance_transform(bitmap: &Bitmap) -> Vec<f64> {
    let (w, h) = (bitmap.width(), bitmap.height());
    match distance_transform_sq(bitmap) {
        Some(mut sq) => {
            for v in &mut sq {
                *v = v.sqrt();
            }
            sq
        }
        None => {
            let diagonal = ((w * w + h * h) as f64).sqrt();
            vec![diagonal; w * h]
        }
    }
}
