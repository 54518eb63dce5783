//! Shared test helpers: a finite-difference gradient checker and
//! independently coded reference implementations of the kernels.

#![allow(dead_code)]

pub mod cases;
pub mod checks;

use cdfkd::autograd::{Tape, Var};
use cdfkd::kernels::{FeatureMap, RoiAlignConfig, RoiBox};
use cdfkd::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values spaced at least `gap` apart in random order, so max pooling and
/// ReLU stay away from their kinks under small perturbations.
pub fn spaced_tensor(rng: &mut ChaCha8Rng, shape: &[usize], gap: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0 + 0.5) * gap).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Relative error with a floor on the denominator so entries whose true
/// gradient is near zero are compared on an absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Compares tape gradients of `sum(w * f(inputs))` with central differences
/// (Richardson-extrapolated) for every input element. `w` is a fixed random projection, so vector
/// outputs are checked in all directions at once. Returns the maximum
/// relative error.
pub fn gradcheck<F>(inputs: &[Tensor], eps: f32, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let project = |tape: &Tape, out: Var, w: &[f32]| -> f64 {
        tape.value(out)
            .data()
            .iter()
            .zip(w)
            .map(|(&o, &wi)| o as f64 * wi as f64)
            .sum()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars).expect("forward");
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let mut wr = rng(0x5eed ^ n as u64);
    let w: Vec<f32> = (0..n).map(|_| wr.random_range(-1.0..1.0)).collect();
    let wv = tape.constant(Tensor::new(shape, w.clone()).unwrap());
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone())).collect();
        let o = f(&mut t, &vs).expect("forward");
        project(&t, o, &w)
    };

    let central = |k: usize, i: usize, step: f32| -> f64 {
        let input = &inputs[k];
        let x = input.data()[i];
        let mut plus = inputs.to_vec();
        let mut minus = inputs.to_vec();
        plus[k] = with_value(input, i, x + step);
        minus[k] = with_value(input, i, x - step);
        // the realized step, since x +/- step rounds in f32
        let h = (plus[k].data()[i] as f64) - (minus[k].data()[i] as f64);
        (eval(&plus) - eval(&minus)) / h
    };

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.data().len() {
            // Richardson extrapolation cancels the second-order truncation term
            let numeric = (4.0 * central(k, i, eps * 0.5) - central(k, i, eps)) / 3.0;
            worst = worst.max(rel_err(analytic[k].data()[i] as f64, numeric));
        }
    }
    worst
}

fn with_value(t: &Tensor, i: usize, v: f32) -> Tensor {
    let mut data = t.data().to_vec();
    data[i] = v;
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

/// Scalar output wrapper for gradcheck closures returning a feature map.
pub fn fm(var: Var, stride: usize) -> FeatureMap {
    FeatureMap { var, stride }
}

// ---------------------------------------------------------------------------
// Reference implementations
// ---------------------------------------------------------------------------

/// Direct nested-loop cross-correlation with zero padding.
pub fn conv2d_reference(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> (Vec<usize>, Vec<f64>) {
    let (ci, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let x = |c: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            input.data()[(c * h + y as usize) * w + xx as usize] as f64
        }
    };
    let mut out = Vec::with_capacity(co * oh * ow);
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.data()[o] as f64;
                for c in 0..ci {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = weight.data()[((o * ci + c) * kh + ky) * kw + kx] as f64;
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            acc += wv * x(c, iy, ix);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    (vec![co, oh, ow], out)
}

/// Bilinear sample of one `[H,W]` plane at continuous cell-index
/// coordinates, clamped to the plane.
pub fn bilinear_at(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let p = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
    p(y0, x0) * (1.0 - fy) * (1.0 - fx) + p(y0, x1) * (1.0 - fy) * fx + p(y1, x0) * fy * (1.0 - fx) + p(y1, x1) * fy * fx
}

/// Half-pixel-center resize: output pixel `i` samples source coordinate
/// `(i + 0.5) * in / out - 0.5`.
pub fn resize_reference(input: &Tensor, oh: usize, ow: usize) -> Vec<f64> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &input.data()[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let y = (i as f64 + 0.5) * h as f64 / oh as f64 - 0.5;
                let x = (j as f64 + 0.5) * w as f64 / ow as f64 - 0.5;
                out.push(bilinear_at(plane, h, w, y, x));
            }
        }
    }
    out
}

/// RoI Align by dense sampling: the box maps to feature space by dividing
/// by the stride; bin `(py,px)` averages `s*s` samples at half-step offsets.
/// Cell `k` has its center at continuous coordinate `k + 0.5`.
pub fn roi_align_reference(fm: &Tensor, stride: usize, b: &RoiBox, cfg: &RoiAlignConfig) -> Vec<f64> {
    let (c, h, w) = (fm.shape()[0], fm.shape()[1], fm.shape()[2]);
    let st = stride as f64;
    let (x0, y0) = (b.x0 as f64 / st, b.y0 as f64 / st);
    let bw = (b.x1 as f64 - b.x0 as f64) / st / cfg.out as f64;
    let bh = (b.y1 as f64 - b.y0 as f64) / st / cfg.out as f64;
    let s = cfg.samples;
    let mut out = Vec::with_capacity(c * cfg.out * cfg.out);
    for ch in 0..c {
        let plane = &fm.data()[ch * h * w..(ch + 1) * h * w];
        for py in 0..cfg.out {
            for px in 0..cfg.out {
                let mut acc = 0.0;
                for iy in 0..s {
                    for ix in 0..s {
                        let y = y0 + bh * (py as f64 + (iy as f64 + 0.5) / s as f64);
                        let x = x0 + bw * (px as f64 + (ix as f64 + 0.5) / s as f64);
                        acc += bilinear_at(plane, h, w, y - 0.5, x - 0.5);
                    }
                }
                out.push(acc / (s * s) as f64);
            }
        }
    }
    out
}

/// `1 - cos(a, b)` in plain f64.
pub fn cosine_reference(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

fn iou_reference(a: &RoiBox, b: &RoiBox) -> f64 {
    let iw = (a.x1.min(b.x1) as f64 - a.x0.max(b.x0) as f64).max(0.0);
    let ih = (a.y1.min(b.y1) as f64 - a.y0.max(b.y0) as f64).max(0.0);
    let i = iw * ih;
    let area = |r: &RoiBox| (r.x1 as f64 - r.x0 as f64) * (r.y1 as f64 - r.y0 as f64);
    i / (area(a) + area(b) - i)
}

/// AP by enumerating every score cut: after each prefix of the ranked list,
/// re-run greedy matching from scratch and record (recall, precision).
/// AP sums, over each recall level `j / npos`, the best precision of any
/// cut reaching that recall.
///
/// `dets` are `(image, score, box)` with distinct scores.
pub fn ap_reference(dets: &[(usize, f32, RoiBox)], gts: &[Vec<RoiBox>], thresh: f64) -> Option<f64> {
    let npos: usize = gts.iter().map(Vec::len).sum();
    if npos == 0 {
        return None;
    }
    let mut ranked = dets.to_vec();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut curve = Vec::new();
    for k in 1..=ranked.len() {
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut tp = 0usize;
        for d in &ranked[..k] {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts[d.0].iter().enumerate() {
                let v = iou_reference(&d.2, g);
                if !used[d.0][j] && v >= thresh && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                used[d.0][j] = true;
                tp += 1;
            }
        }
        curve.push((tp as f64 / npos as f64, tp as f64 / k as f64));
    }
    let mut ap = 0.0;
    for j in 1..=npos {
        let level = j as f64 / npos as f64;
        let best = curve
            .iter()
            .filter(|(r, _)| *r >= level - 1e-12)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        ap += best / npos as f64;
    }
    Some(ap)
}

/// Random AP instance: up to `max_dets` detections with distinct scores
/// over `images` images and up to `max_gt` GT per image, boxes on a coarse
/// grid so exact overlaps and near-threshold IoUs both occur.
pub fn random_ap_instance(
    rng: &mut ChaCha8Rng,
    images: usize,
    max_gt: usize,
    max_dets: usize,
) -> (Vec<(usize, f32, RoiBox)>, Vec<Vec<RoiBox>>) {
    let rbox = |rng: &mut ChaCha8Rng| {
        let x0 = rng.random_range(0..8) as f32 * 2.0;
        let y0 = rng.random_range(0..8) as f32 * 2.0;
        let w = rng.random_range(2..8) as f32 * 2.0;
        let h = rng.random_range(2..8) as f32 * 2.0;
        RoiBox {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
        }
    };
    let mut remaining = rng.random_range(0..=max_gt);
    let mut gts = Vec::with_capacity(images);
    for i in 0..images {
        let k = if i + 1 == images { remaining } else { rng.random_range(0..=remaining) };
        remaining -= k;
        gts.push((0..k).map(|_| rbox(rng)).collect::<Vec<_>>());
    }
    let n = rng.random_range(0..=max_dets);
    let mut scores: Vec<f32> = (0..n).map(|i| (i as f32 + 1.0) / (n as f32 + 1.0)).collect();
    for i in (1..n).rev() {
        scores.swap(i, rng.random_range(0..=i));
    }
    let dets = scores
        .into_iter()
        .map(|s| {
            let img = rng.random_range(0..images);
            // half the detections copy or jitter a GT of their image
            let b = match gts[img].len() {
                0 => rbox(rng),
                m if rng.random_bool(0.6) => {
                    let g: RoiBox = gts[img][rng.random_range(0..m)];
                    let d = rng.random_range(0..3) as f32;
                    RoiBox {
                        x0: g.x0 + d,
                        y0: g.y0,
                        x1: g.x1 + d,
                        y1: g.y1,
                    }
                }
                _ => rbox(rng),
            };
            (img, s, b)
        })
        .collect();
    (dets, gts)
}
