//! Binary morphology: connected components, boundary extraction, disk
//! dilation.

use super::edt::distance_transform_sq;
use super::Bitmap;

/// 8-connected component labeling of a binary image.
pub struct ComponentMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: usize,
}

impl ComponentMap {
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    /// Per-pixel component label; 0 is background, components are 1..=count.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
    pub fn count(&self) -> usize {
        self.count
    }
}

/// Label 8-connected components. Labels are assigned in order of first
/// touch during a row-major scan, so the result is deterministic.
pub fn connected_components(bitmap: &Bitmap) -> ComponentMap {
    let (w, h) = (bitmap.width(), bitmap.height());
    let bits = bitmap.bits();
    let mut labels = vec![0u32; w * h];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let y = idx / w;
            let x = idx % w;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let ny = y as i64 + dy;
                    let nx = x as i64 + dx;
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let nidx = ny as usize * w + nx as usize;
                    if bits[nidx] && labels[nidx] == 0 {
                        labels[nidx] = count;
                        stack.push(nidx);
                    }
                }
            }
        }
    }
    ComponentMap {
        width: w,
        height: h,
        labels,
        count: count as usize,
    }
}

/// A pixel is boundary iff it is foreground and at least one 4-neighbor is
/// background; the image border counts as background.
pub fn extract_boundary(bitmap: &Bitmap) -> Bitmap {
    let (w, h) = (bitmap.width(), bitmap.height());
    let bits = bitmap.bits();
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !bits[y * w + x] {
                continue;
            }
            let up = y == 0 || !bits[(y - 1) * w + x];
            let down = y + 1 == h || !bits[(y + 1) * w + x];
            let left = x == 0 || !bits[y * w + x - 1];
            let right = x + 1 == w || !bits[y * w + x + 1];
            out[y * w + x] = up || down || left || right;
        }
    }
    Bitmap::new(w, h, out).expect("same dimensions")
}

/// Euclidean disk dilation: output pixel set iff its distance to some input
/// pixel is at most `radius`.
pub fn dilate_disk(bitmap: &Bitmap, radius: f64) -> Bitmap {
    let (w, h) = (bitmap.width(), bitmap.height());
    let Some(sq) = distance_transform_sq(bitmap) else {
        return Bitmap::empty(w, h);
    };
    let r_sq = radius * radius;
    let bits = sq.iter().map(|&d| d <= r_sq).collect();
    Bitmap::new(w, h, bits).expect("same dimensions")
}
