//! Raw numeric kernels shared by the graph's forward and backward rules.
//!
//! All functions operate on flat row-major buffers. Loop order (and hence
//! floating-point summation order) is fixed, so results are bitwise
//! reproducible across runs.

use super::Element;

/// 3x3 cross-correlation, stride 1, zero padding 1. Output spatial size
/// equals input spatial size.
///
/// `input`: [n, c_in, h, w], `weight`: [c_out, c_in, 3, 3], `bias`: [c_out].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<T: Element>(
    input: &[T],
    weight: &[T],
    bias: &[T],
    n: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); n * c_out * h * w];
    let in_plane = h * w;
    for img in 0..n {
        for (co, &b) in bias.iter().enumerate() {
            let out_base = (img * c_out + co) * in_plane;
            out[out_base..out_base + in_plane].fill(b);
            for ci in 0..c_in {
                let in_base = (img * c_in + ci) * in_plane;
                let w_base = (co * c_in + ci) * 9;
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let wk = weight[w_base + ky * 3 + kx];
                        if wk == T::zero() {
                            continue;
                        }
                        shifted_axpy(
                            &mut out[out_base..out_base + in_plane],
                            &input[in_base..in_base + in_plane],
                            wk,
                            h,
                            w,
                            ky as isize - 1,
                            kx as isize - 1,
                        );
                    }
                }
            }
        }
    }
    out
}

/// out[y][x] += k * src[y+dy][x+dx] over the in-bounds overlap.
fn shifted_axpy<T: Element>(
    out: &mut [T],
    src: &[T],
    k: T,
    h: usize,
    w: usize,
    dy: isize,
    dx: isize,
) {
    let y_lo = (-dy).max(0) as usize;
    let y_hi = ((h as isize - dy).min(h as isize)).max(0) as usize;
    let x_lo = (-dx).max(0) as usize;
    let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
    if x_lo >= x_hi {
        return;
    }
    for y in y_lo..y_hi {
        let sy = (y as isize + dy) as usize;
        let o = &mut out[y * w + x_lo..y * w + x_hi];
        let s = &src[sy * w + (x_lo as isize + dx) as usize..];
        for (oi, si) in o.iter_mut().zip(s) {
            *oi = *oi + k * *si;
        }
    }
}

/// dot of out-region and shifted src-region: sum over y,x of
/// a[y][x] * b[y+dy][x+dx] on the in-bounds overlap.
fn shifted_dot<T: Element>(a: &[T], b: &[T], h: usize, w: usize, dy: isize, dx: isize) -> T {
    let y_lo = (-dy).max(0) as usize;
    let y_hi = ((h as isize - dy).min(h as isize)).max(0) as usize;
    let x_lo = (-dx).max(0) as usize;
    let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
    let mut acc = T::zero();
    if x_lo >= x_hi {
        return acc;
    }
    for y in y_lo..y_hi {
        let sy = (y as isize + dy) as usize;
        let ra = &a[y * w + x_lo..y * w + x_hi];
        let rb = &b[sy * w + (x_lo as isize + dx) as usize..];
        for (ai, bi) in ra.iter().zip(rb) {
            acc = acc + *ai * *bi;
        }
    }
    acc
}

/// Gradients of `conv2d_forward` w.r.t. input, weight, and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Element>(
    grad_out: &[T],
    input: &[T],
    weight: &[T],
    n: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = h * w;
    let mut grad_in = vec![T::zero(); n * c_in * plane];
    let mut grad_w = vec![T::zero(); c_out * c_in * 9];
    let mut grad_b = vec![T::zero(); c_out];

    for img in 0..n {
        for co in 0..c_out {
            let go = &grad_out[(img * c_out + co) * plane..(img * c_out + co + 1) * plane];
            let mut b_acc = T::zero();
            for g in go {
                b_acc = b_acc + *g;
            }
            grad_b[co] = grad_b[co] + b_acc;
            for ci in 0..c_in {
                let in_base = (img * c_in + ci) * plane;
                let w_base = (co * c_in + ci) * 9;
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let dy = ky as isize - 1;
                        let dx = kx as isize - 1;
                        // d/dw[ky][kx] = sum_yx go[y][x] * in[y+dy][x+dx]
                        let gw = shifted_dot(go, &input[in_base..in_base + plane], h, w, dy, dx);
                        grad_w[w_base + ky * 3 + kx] = grad_w[w_base + ky * 3 + kx] + gw;
                        // d/din[y+dy][x+dx] += w[ky][kx] * go[y][x]
                        let wk = weight[w_base + ky * 3 + kx];
                        if wk != T::zero() {
                            shifted_axpy(
                                &mut grad_in[in_base..in_base + plane],
                                go,
                                wk,
                                h,
                                w,
                                -dy,
                                -dx,
                            );
                        }
                    }
                }
            }
        }
    }
    (grad_in, grad_w, grad_b)
}

/// 2x2 max pooling with stride 2. Returns pooled values and the flat input
/// index of each window maximum (first occurrence in row-major window order
/// on ties), which the backward rule scatters into.
pub fn maxpool2_forward<T: Element>(
    input: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<u32>) {
    let oh = h / 2;
    let ow = w / 2;
    let mut out = vec![T::zero(); n * c * oh * ow];
    let mut argmax = vec![0u32; n * c * oh * ow];
    for plane in 0..n * c {
        let in_base = plane * h * w;
        let out_base = plane * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = in_base + (2 * oy) * w + 2 * ox;
                let candidates = [top, top + 1, top + w, top + w + 1];
                let mut best = candidates[0];
                let mut best_v = input[best];
                for &idx in &candidates[1..] {
                    if input[idx] > best_v {
                        best_v = input[idx];
                        best = idx;
                    }
                }
                out[out_base + oy * ow + ox] = best_v;
                argmax[out_base + oy * ow + ox] = best as u32;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2_backward<T: Element>(grad_out: &[T], argmax: &[u32], in_len: usize) -> Vec<T> {
    let mut grad_in = vec![T::zero(); in_len];
    for (g, &idx) in grad_out.iter().zip(argmax) {
        let i = idx as usize;
        grad_in[i] = grad_in[i] + *g;
    }
    grad_in
}

/// Per-axis source taps for bilinear interpolation, half-pixel centers
/// (align_corners = false), edges clamped.
fn bilinear_taps<T: Element>(in_len: usize, factor: usize) -> Vec<(usize, usize, T, T)> {
    let mut taps = Vec::with_capacity(in_len * factor);
    for o in 0..in_len * factor {
        let src = (o as f64 + 0.5) / factor as f64 - 0.5;
        let i0 = src.floor();
        let frac = src - i0;
        let lo = (i0.max(0.0) as usize).min(in_len - 1);
        let hi = ((i0 + 1.0).max(0.0) as usize).min(in_len - 1);
        taps.push((lo, hi, T::from_f64(1.0 - frac), T::from_f64(frac)));
    }
    taps
}

/// Bilinear upsampling by an integer factor.
pub fn upsample_forward<T: Element>(
    input: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let ty = bilinear_taps::<T>(h, factor);
    let tx = bilinear_taps::<T>(w, factor);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let ib = plane * h * w;
        let ob = plane * oh * ow;
        for oy in 0..oh {
            let (y0, y1, wy0, wy1) = ty[oy];
            for ox in 0..ow {
                let (x0, x1, wx0, wx1) = tx[ox];
                let v = wy0 * (wx0 * input[ib + y0 * w + x0] + wx1 * input[ib + y0 * w + x1])
                    + wy1 * (wx0 * input[ib + y1 * w + x0] + wx1 * input[ib + y1 * w + x1]);
                out[ob + oy * ow + ox] = v;
            }
        }
    }
    out
}

/// Adjoint of `upsample_forward`: scatters each output gradient back to its
/// source taps with identical weights.
pub fn upsample_backward<T: Element>(
    grad_out: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let ty = bilinear_taps::<T>(h, factor);
    let tx = bilinear_taps::<T>(w, factor);
    let mut grad_in = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let ib = plane * h * w;
        let ob = plane * oh * ow;
        for oy in 0..oh {
            let (y0, y1, wy0, wy1) = ty[oy];
            for ox in 0..ow {
                let (x0, x1, wx0, wx1) = tx[ox];
                let g = grad_out[ob + oy * ow + ox];
                grad_in[ib + y0 * w + x0] = grad_in[ib + y0 * w + x0] + wy0 * wx0 * g;
                grad_in[ib + y0 * w + x1] = grad_in[ib + y0 * w + x1] + wy0 * wx1 * g;
                grad_in[ib + y1 * w + x0] = grad_in[ib + y1 * w + x0] + wy1 * wx0 * g;
                grad_in[ib + y1 * w + x1] = grad_in[ib + y1 * w + x1] + wy1 * wx1 * g;
            }
        }
    }
    grad_in
}

/// Channelwise softmax with max subtraction, per pixel.
pub fn softmax_channels_forward<T: Element>(
    input: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); input.len()];
    for img in 0..n {
        for p in 0..plane {
            let at = |ch: usize| (img * c + ch) * plane + p;
            let mut m = input[at(0)];
            for ch in 1..c {
                if input[at(ch)] > m {
                    m = input[at(ch)];
                }
            }
            let mut denom = T::zero();
            for ch in 0..c {
                let e = (input[at(ch)] - m).exp();
                out[at(ch)] = e;
                denom = denom + e;
            }
            for ch in 0..c {
                out[at(ch)] = out[at(ch)] / denom;
            }
        }
    }
    out
}

/// Softmax backward from the saved output: ds_i = s_i * (g_i - sum_j g_j s_j).
pub fn softmax_channels_backward<T: Element>(
    grad_out: &[T],
    output: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let plane = h * w;
    let mut grad_in = vec![T::zero(); grad_out.len()];
    for img in 0..n {
        for p in 0..plane {
            let at = |ch: usize| (img * c + ch) * plane + p;
            let mut dot = T::zero();
            for ch in 0..c {
                dot = dot + grad_out[at(ch)] * output[at(ch)];
            }
            for ch in 0..c {
                grad_in[at(ch)] = output[at(ch)] * (grad_out[at(ch)] - dot);
            }
        }
    }
    grad_in
}
