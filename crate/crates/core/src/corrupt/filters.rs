//! Float-image helpers shared by the corruption kinds.

use rand::Rng;

use crate::kernels::lerp;
use crate::raster::Image;

/// Interleaved RGB in `[0,255]` as `f32`.
#[derive(Clone)]
pub(crate) struct Buf {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>,
}

impl Buf {
    pub fn from_image(img: &Image) -> Self {
        Buf {
            w: img.width(),
            h: img.height(),
            data: img.to_f32(),
        }
    }

    pub fn into_image(self) -> Image {
        Image::from_f32(self.w, self.h, &self.data)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.w + x) * 3 + c]
    }

    /// Bilinear read at a continuous pixel-index coordinate, clamped to the border.
    #[inline]
    pub fn sample(&self, x: f32, y: f32, c: usize) -> f32 {
        let xc = x.clamp(0.0, (self.w - 1) as f32);
        let yc = y.clamp(0.0, (self.h - 1) as f32);
        let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.w - 1), (y0 + 1).min(self.h - 1));
        let (wx, wy) = (xc - x0 as f32, yc - y0 as f32);
        let top = lerp(self.at(x0, y0, c), self.at(x1, y0, c), wx);
        let bottom = lerp(self.at(x0, y1, c), self.at(x1, y1, c), wx);
        lerp(top, bottom, wy)
    }

    /// Resamples every pixel through `map(x, y) -> (sx, sy)`.
    pub fn warp(&self, map: impl Fn(usize, usize) -> (f32, f32)) -> Buf {
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..self.h {
            for x in 0..self.w {
                let (sx, sy) = map(x, y);
                for c in 0..3 {
                    out.push(self.sample(sx, sy, c));
                }
            }
        }
        Buf {
            w: self.w,
            h: self.h,
            data: out,
        }
    }
}

pub(crate) fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable convolution of a single-channel plane with clamped borders.
pub(crate) fn convolve_plane(plane: &[f32], w: usize, h: usize, k: &[f32]) -> Vec<f32> {
    let r = (k.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| kv * plane[y * w + clampi(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| kv * tmp[clampi(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

pub(crate) fn split(buf: &Buf) -> [Vec<f32>; 3] {
    let mut planes = [Vec::new(), Vec::new(), Vec::new()];
    for (c, p) in planes.iter_mut().enumerate() {
        *p = buf.data.iter().skip(c).step_by(3).copied().collect();
    }
    planes
}

pub(crate) fn merge(w: usize, h: usize, planes: &[Vec<f32>; 3]) -> Buf {
    let mut data = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        for p in planes {
            data.push(p[i]);
        }
    }
    Buf { w, h, data }
}

pub(crate) fn gaussian_blur(buf: &Buf, sigma: f32) -> Buf {
    let k = gaussian_kernel(sigma);
    let planes = split(buf).map(|p| convolve_plane(&p, buf.w, buf.h, &k));
    merge(buf.w, buf.h, &planes)
}

/// Dense 2-D convolution with clamped borders; `kernel` is `(2r+1)^2`.
pub(crate) fn convolve2d(buf: &Buf, kernel: &[f32], r: usize) -> Buf {
    let side = 2 * r + 1;
    debug_assert_eq!(kernel.len(), side * side);
    let mut out = vec![0.0; buf.data.len()];
    for y in 0..buf.h {
        for x in 0..buf.w {
            let mut acc = [0.0f32; 3];
            for ky in 0..side {
                let sy = (y as isize + ky as isize - r as isize).clamp(0, buf.h as isize - 1) as usize;
                for kx in 0..side {
                    let kv = kernel[ky * side + kx];
                    if kv == 0.0 {
                        continue;
                    }
                    let sx = (x as isize + kx as isize - r as isize).clamp(0, buf.w as isize - 1) as usize;
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += kv * buf.at(sx, sy, c);
                    }
                }
            }
            out[(y * buf.w + x) * 3..(y * buf.w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    Buf {
        w: buf.w,
        h: buf.h,
        data: out,
    }
}

/// Multi-octave value noise normalized to `[0,1]`. Octave `k` has
/// `base * 2^k` cells per side and amplitude `decay^-k`.
pub(crate) fn fractal_noise<R: Rng + ?Sized>(w: usize, h: usize, base: usize, decay: f32, rng: &mut R) -> Vec<f32> {
    let mut acc = vec![0.0f32; w * h];
    let mut cells = base.max(1);
    let mut amp = 1.0f32;
    while cells <= w.max(h) {
        let n = cells + 1;
        let grid: Vec<f32> = (0..n * n).map(|_| rng.random::<f32>()).collect();
        for y in 0..h {
            let gy = y as f32 / h as f32 * cells as f32;
            let (y0, wy) = (gy.floor() as usize, gy.fract());
            for x in 0..w {
                let gx = x as f32 / w as f32 * cells as f32;
                let (x0, wx) = (gx.floor() as usize, gx.fract());
                let top = lerp(grid[y0 * n + x0], grid[y0 * n + x0 + 1], wx);
                let bottom = lerp(grid[(y0 + 1) * n + x0], grid[(y0 + 1) * n + x0 + 1], wx);
                acc[y * w + x] += amp * lerp(top, bottom, wy);
            }
        }
        cells *= 2;
        amp /= decay;
    }
    let (lo, hi) = acc
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(1e-6);
    acc.into_iter().map(|v| (v - lo) / span).collect()
}

pub(crate) fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h / 6.0, s, max)
}

pub(crate) fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = (h * 6.0).rem_euclid(6.0);
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2, 0.4, 0.9), (1.0, 0.0, 0.0), (0.5, 0.5, 0.5), (0.0, 0.0, 0.0), (0.3, 0.9, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-5 && (g - g2).abs() < 1e-5 && (b - b2).abs() < 1e-5);
        }
    }

    #[test]
    fn noise_is_normalized() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = fractal_noise(40, 30, 2, 2.0, &mut rng);
        let max = n.iter().cloned().fold(0.0, f32::max);
        let min = n.iter().cloned().fold(1.0, f32::min);
        assert!((max - 1.0).abs() < 1e-6 && min.abs() < 1e-6);
    }

    #[test]
    fn blur_preserves_constant() {
        let buf = Buf { w: 7, h: 5, data: vec![42.0; 105] };
        let out = gaussian_blur(&buf, 1.3);
        assert!(out.data.iter().all(|&v| (v - 42.0).abs() < 1e-3));
    }
}
