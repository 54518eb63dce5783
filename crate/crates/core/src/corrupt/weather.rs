//! Weather and illumination.

use rand::Rng;

use super::filters::{fractal_noise, gaussian_blur, hsv_to_rgb, rgb_to_hsv, Buf};

/// `(flake density, flake blur sigma, scene whitening blend)`.
pub const SNOW: [(f32, f32, f32); 5] = [
    (0.006, 0.6, 0.15),
    (0.010, 0.7, 0.25),
    (0.016, 0.8, 0.30),
    (0.022, 0.9, 0.35),
    (0.030, 1.0, 0.45),
];
/// `(image weight, frost weight)`.
pub const FROST: [(f32, f32); 5] = [(1.0, 0.4), (0.8, 0.6), (0.7, 0.7), (0.65, 0.7), (0.6, 0.75)];
/// `(fog strength, octave decay)`; lower decay gives finer fog structure.
pub const FOG: [(f32, f32); 5] = [(1.5, 2.0), (2.0, 2.0), (2.5, 1.7), (2.5, 1.5), (3.0, 1.4)];
/// Additive shift of the HSV value channel.
pub const BRIGHTNESS: [f32; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

const FROST_TINT: [f32; 3] = [0.86, 0.92, 1.0];

pub(crate) fn snow<R: Rng + ?Sized>(buf: &Buf, params: (f32, f32, f32), rng: &mut R) -> Buf {
    let (density, sigma, blend) = params;
    let mut out = buf.clone();
    for px in out.data.chunks_exact_mut(3) {
        let gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        let lifted = gray * 1.5 + 0.5 * 255.0;
        for v in px.iter_mut() {
            *v = (1.0 - blend) * *v + blend * v.max(lifted);
        }
    }
    let mut flakes = Buf {
        w: buf.w,
        h: buf.h,
        data: vec![0.0; buf.data.len()],
    };
    for px in flakes.data.chunks_exact_mut(3) {
        if rng.random::<f32>() < density {
            px.fill(255.0);
        }
    }
    let flakes = gaussian_blur(&flakes, sigma);
    let peak = flakes.data.iter().cloned().fold(0.0f32, f32::max);
    if peak > 0.0 {
        for (o, f) in out.data.iter_mut().zip(&flakes.data) {
            *o += f / peak * 255.0;
        }
    }
    out
}

pub(crate) fn frost<R: Rng + ?Sized>(buf: &Buf, params: (f32, f32), rng: &mut R) -> Buf {
    let (c0, c1) = params;
    let tex = fractal_noise(buf.w, buf.h, 4, 1.3, rng);
    let mut out = buf.clone();
    for (i, px) in out.data.chunks_exact_mut(3).enumerate() {
        let t = tex[i] * tex[i];
        for (c, v) in px.iter_mut().enumerate() {
            *v = c0 * *v + c1 * t * FROST_TINT[c] * 255.0;
        }
    }
    out
}

pub(crate) fn fog<R: Rng + ?Sized>(buf: &Buf, params: (f32, f32), rng: &mut R) -> Buf {
    let (strength, decay) = params;
    let noise = fractal_noise(buf.w, buf.h, 2, decay, rng);
    let max = buf.data.iter().cloned().fold(0.0f32, f32::max) / 255.0;
    let mut out = buf.clone();
    for (i, px) in out.data.chunks_exact_mut(3).enumerate() {
        for v in px.iter_mut() {
            let x = *v / 255.0 + strength * noise[i];
            *v = x * max / (max + strength) * 255.0;
        }
    }
    out
}

pub(crate) fn brightness(buf: &Buf, shift: f32) -> Buf {
    let mut out = buf.clone();
    for px in out.data.chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv(px[0] / 255.0, px[1] / 255.0, px[2] / 255.0);
        let (r, g, b) = hsv_to_rgb(h, s, (v + shift).clamp(0.0, 1.0));
        px[0] = r * 255.0;
        px[1] = g * 255.0;
        px[2] = b * 255.0;
    }
    out
}
