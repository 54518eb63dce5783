//! Blur family.

use rand::Rng;

use super::filters::{convolve2d, gaussian_blur, Buf};

/// Disk radius in pixels.
pub const DEFOCUS_RADIUS: [f32; 5] = [0.8, 1.2, 1.6, 2.0, 2.6];
/// `(sigma, max displacement, iterations)` of the blur-shuffle-blur cycle.
pub const GLASS: [(f32, usize, usize); 5] = [(0.4, 1, 1), (0.5, 1, 2), (0.6, 2, 1), (0.7, 2, 2), (0.8, 3, 2)];
/// Streak length in pixels; the direction is drawn uniformly.
pub const MOTION_LENGTH: [f32; 5] = [2.0, 3.0, 4.0, 6.0, 8.0];
/// Largest zoom factor; intermediate zooms are evenly spaced from 1.
pub const ZOOM_MAX: [f32; 5] = [1.04, 1.07, 1.10, 1.14, 1.18];

const ZOOM_STEPS: usize = 6;
const SUPERSAMPLE: usize = 4;

/// Area-weighted disk kernel.
fn disk_kernel(radius: f32) -> (Vec<f32>, usize) {
    let r = radius.ceil() as usize;
    let side = 2 * r + 1;
    let mut k = vec![0.0f32; side * side];
    for ky in 0..side {
        for kx in 0..side {
            let mut inside = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let dx = kx as f32 - r as f32 + (sx as f32 + 0.5) / SUPERSAMPLE as f32 - 0.5;
                    let dy = ky as f32 - r as f32 + (sy as f32 + 0.5) / SUPERSAMPLE as f32 - 0.5;
                    if dx * dx + dy * dy <= radius * radius {
                        inside += 1;
                    }
                }
            }
            k[ky * side + kx] = inside as f32;
        }
    }
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    (k, r)
}

pub(crate) fn defocus(buf: &Buf, radius: f32) -> Buf {
    let (k, r) = disk_kernel(radius);
    convolve2d(buf, &k, r)
}

pub(crate) fn glass<R: Rng + ?Sized>(buf: &Buf, params: (f32, usize, usize), rng: &mut R) -> Buf {
    let (sigma, delta, iterations) = params;
    let mut out = gaussian_blur(buf, sigma);
    let (w, h) = (out.w, out.h);
    let d = delta as i64;
    for _ in 0..iterations {
        for y in (0..h).rev() {
            for x in (0..w).rev() {
                let nx = (x as isize + rng.random_range(-d..=d) as isize).clamp(0, w as isize - 1) as usize;
                let ny = (y as isize + rng.random_range(-d..=d) as isize).clamp(0, h as isize - 1) as usize;
                for c in 0..3 {
                    out.data.swap((y * w + x) * 3 + c, (ny * w + nx) * 3 + c);
                }
            }
        }
    }
    gaussian_blur(&out, sigma)
}

pub(crate) fn motion<R: Rng + ?Sized>(buf: &Buf, length: f32, rng: &mut R) -> Buf {
    let angle = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let taps = length.ceil() as usize + 1;
    let mut out = vec![0.0f32; buf.data.len()];
    for t in 0..taps {
        let off = length * t as f32 / (taps - 1) as f32;
        let shifted = buf.warp(|x, y| (x as f32 - off * dx, y as f32 - off * dy));
        for (o, s) in out.iter_mut().zip(&shifted.data) {
            *o += s / taps as f32;
        }
    }
    Buf {
        w: buf.w,
        h: buf.h,
        data: out,
    }
}

pub(crate) fn zoom(buf: &Buf, max_zoom: f32) -> Buf {
    let (cx, cy) = ((buf.w as f32 - 1.0) / 2.0, (buf.h as f32 - 1.0) / 2.0);
    let mut out = buf.data.clone();
    for step in 1..=ZOOM_STEPS {
        let z = 1.0 + (max_zoom - 1.0) * step as f32 / ZOOM_STEPS as f32;
        let zoomed = buf.warp(|x, y| ((x as f32 - cx) / z + cx, (y as f32 - cy) / z + cy));
        for (o, s) in out.iter_mut().zip(&zoomed.data) {
            *o += s;
        }
    }
    let n = (ZOOM_STEPS + 1) as f32;
    out.iter_mut().for_each(|v| *v /= n);
    Buf {
        w: buf.w,
        h: buf.h,
        data: out,
    }
}
