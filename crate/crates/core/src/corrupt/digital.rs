//! Digital and geometric distortions.

use rand::Rng;

use super::filters::{convolve_plane, gaussian_kernel, Buf};

/// Contrast factor applied around the global mean.
pub const CONTRAST: [f32; 5] = [0.6, 0.45, 0.33, 0.22, 0.12];
/// `(max displacement in pixels, field smoothing sigma)`.
pub const ELASTIC: [(f32, f32); 5] = [(1.0, 3.0), (1.5, 3.0), (2.0, 2.5), (2.5, 2.5), (3.0, 2.0)];
/// Intermediate resolution as a fraction of the original.
pub const PIXELATE: [f32; 5] = [0.75, 0.6, 0.5, 0.4, 0.3];
/// Codec quality on the usual 1..100 scale.
pub const BLOCK_CODEC_QUALITY: [u32; 5] = [40, 25, 15, 10, 6];

pub(crate) fn contrast(buf: &Buf, factor: f32) -> Buf {
    let mean = (buf.data.iter().map(|&v| v as f64).sum::<f64>() / buf.data.len() as f64) as f32;
    let mut out = buf.clone();
    out.data.iter_mut().for_each(|v| *v = (*v - mean) * factor + mean);
    out
}

pub(crate) fn elastic<R: Rng + ?Sized>(buf: &Buf, params: (f32, f32), rng: &mut R) -> Buf {
    let (amp, sigma) = params;
    let (w, h) = (buf.w, buf.h);
    let k = gaussian_kernel(sigma);
    let mut field = || {
        let raw: Vec<f32> = (0..w * h).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let smooth = convolve_plane(&raw, w, h, &k);
        let peak = smooth.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-6);
        smooth.into_iter().map(|v| v / peak * amp).collect::<Vec<f32>>()
    };
    let dx = field();
    let dy = field();
    buf.warp(|x, y| (x as f32 + dx[y * w + x], y as f32 + dy[y * w + x]))
}

pub(crate) fn pixelate(buf: &Buf, factor: f32) -> Buf {
    let (w, h) = (buf.w, buf.h);
    let (sw, sh) = (
        ((w as f32 * factor).round() as usize).max(1),
        ((h as f32 * factor).round() as usize).max(1),
    );
    // box average into the coarse grid, then nearest-neighbour back up
    let cell = |i: usize, n: usize, s: usize| i * s / n;
    let mut sums = vec![0.0f64; sw * sh * 3];
    let mut counts = vec![0u32; sw * sh];
    for y in 0..h {
        let cy = cell(y, h, sh);
        for x in 0..w {
            let ci = cy * sw + cell(x, w, sw);
            counts[ci] += 1;
            for c in 0..3 {
                sums[ci * 3 + c] += buf.at(x, y, c) as f64;
            }
        }
    }
    let mut out = Vec::with_capacity(buf.data.len());
    for y in 0..h {
        let cy = cell(y, h, sh);
        for x in 0..w {
            let ci = cy * sw + cell(x, w, sw);
            for c in 0..3 {
                out.push((sums[ci * 3 + c] / counts[ci] as f64) as f32);
            }
        }
    }
    Buf { w, h, data: out }
}

const LUMA_Q: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29, 51,
    87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];
const CHROMA_Q: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99,
];

fn scaled_table(base: &[u16; 64], quality: u32) -> [f32; 64] {
    let q = quality.clamp(1, 100);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f32;
    }
    out
}

fn dct_basis() -> [[f32; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f32 / 8.0).sqrt() } else { (2.0f32 / 8.0).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * ((2 * x + 1) as f32 * u as f32 * std::f32::consts::PI / 16.0).cos();
        }
    }
    m
}

/// Orthonormal 2-D DCT round trip of one 8×8 block with quantization.
fn code_block(block: &mut [f32; 64], table: &[f32; 64], m: &[[f32; 8]; 8]) {
    let mut tmp = [0.0f32; 64];
    let mut coef = [0.0f32; 64];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|y| m[u][y] * block[y * 8 + x]).sum();
        }
    }
    for u in 0..8 {
        for v in 0..8 {
            let c: f32 = (0..8).map(|x| m[v][x] * tmp[u * 8 + x]).sum();
            let q = table[u * 8 + v];
            coef[u * 8 + v] = (c / q).round() * q;
        }
    }
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|u| m[u][y] * coef[u * 8 + v]).sum();
        }
    }
    for y in 0..8 {
        for x in 0..8 {
            block[y * 8 + x] = (0..8).map(|v| m[v][x] * tmp[y * 8 + v]).sum();
        }
    }
}

pub(crate) fn block_codec(buf: &Buf, quality: u32) -> Buf {
    let (w, h) = (buf.w, buf.h);
    let tables = [
        scaled_table(&LUMA_Q, quality),
        scaled_table(&CHROMA_Q, quality),
        scaled_table(&CHROMA_Q, quality),
    ];
    let m = dct_basis();
    let mut planes = [vec![0.0f32; w * h], vec![0.0f32; w * h], vec![0.0f32; w * h]];
    for (i, px) in buf.data.chunks_exact(3).enumerate() {
        let (r, g, b) = (px[0], px[1], px[2]);
        planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
        planes[1][i] = -0.168736 * r - 0.331264 * g + 0.5 * b;
        planes[2][i] = 0.5 * r - 0.418688 * g - 0.081312 * b;
    }
    for (plane, table) in planes.iter_mut().zip(&tables) {
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                // edge-replicate partial blocks
                let mut block = [0.0f32; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        let sy = (by + y).min(h - 1);
                        let sx = (bx + x).min(w - 1);
                        block[y * 8 + x] = plane[sy * w + sx];
                    }
                }
                code_block(&mut block, table, &m);
                for y in 0..8.min(h - by) {
                    for x in 0..8.min(w - bx) {
                        plane[(by + y) * w + bx + x] = block[y * 8 + x];
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(buf.data.len());
    for i in 0..w * h {
        let (yy, cb, cr) = (planes[0][i] + 128.0, planes[1][i], planes[2][i]);
        out.push(yy + 1.402 * cr);
        out.push(yy - 0.344136 * cb - 0.714136 * cr);
        out.push(yy + 1.772 * cb);
    }
    Buf { w, h, data: out }
}
