//! Randomized kernel-versus-oracle sweeps, shared by the oracle tests and
//! the acceptance report. Each returns the worst deviation found.

use cdfkd::eval::{average_precision, ScoredBox};
use cdfkd::kernels::{bilinear_resize_forward, conv2d_forward, roi_align_forward, RoiAlignConfig, RoiBox};
use rand::Rng;

use super::{
    ap_reference, conv2d_reference, random_ap_instance, random_tensor, resize_reference, rng, roi_align_reference,
};

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

pub fn scored(dets: &[(usize, f32, RoiBox)]) -> Vec<ScoredBox> {
    dets.iter()
        .map(|&(image, score, bbox)| ScoredBox { image, score, bbox })
        .collect()
}

pub fn conv2d_sweep(cases: usize) -> f64 {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for i in 0..cases {
        let (stride, pad) = [(1, 0), (1, 1), (2, 1), (2, 0)][i % 4];
        let x = random_tensor(&mut r, &[2, 7, 7], -1.0, 1.0);
        let w = random_tensor(&mut r, &[4, 2, 3, 3], -1.0, 1.0);
        let b = random_tensor(&mut r, &[4], -1.0, 1.0);
        let got = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
        let (shape, want) = conv2d_reference(&x, &w, &b, stride, pad);
        assert_eq!(got.shape(), shape.as_slice());
        worst = worst.max(max_abs_diff(got.data(), &want));
    }
    worst
}

pub fn resize_sweep(cases: usize) -> f64 {
    let mut r = rng(12);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (h, w) = (r.random_range(1..9), r.random_range(1..9));
        let (oh, ow) = (r.random_range(1..13), r.random_range(1..13));
        let x = random_tensor(&mut r, &[2, h, w], -2.0, 2.0);
        let got = bilinear_resize_forward(&x, oh, ow).unwrap();
        worst = worst.max(max_abs_diff(got.data(), &resize_reference(&x, oh, ow)));
    }
    worst
}

/// Random maps, strides, bin counts and sampling ratios; boxes may stick
/// out of the map to exercise clamping.
pub fn roi_align_sweep(cases: usize) -> f64 {
    let mut r = rng(13);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let stride = [1, 4, 8][case % 3];
        let (h, w) = (r.random_range(2..8), r.random_range(2..8));
        let fm = random_tensor(&mut r, &[3, h, w], -1.0, 1.0);
        let (ih, iw) = ((h * stride) as f32, (w * stride) as f32);
        let bw = r.random_range(0.3..1.2) * iw;
        let bh = r.random_range(0.3..1.2) * ih;
        let x0 = r.random_range(-0.1 * iw..iw - 0.2 * bw);
        let y0 = r.random_range(-0.1 * ih..ih - 0.2 * bh);
        let b = RoiBox::new(x0, y0, x0 + bw, y0 + bh).unwrap();
        let cfg = RoiAlignConfig {
            out: r.random_range(1..5),
            samples: r.random_range(1..4),
            ..RoiAlignConfig::default()
        };
        let (got, skipped) = roi_align_forward(&fm, stride, &[b], &cfg).unwrap();
        assert!(skipped.is_empty());
        worst = worst.max(max_abs_diff(got.unwrap().data(), &roi_align_reference(&fm, stride, &b, &cfg)));
    }
    worst
}

/// Worst AP deviation and the number of instances with at least one GT.
/// Panics when the implementation and the oracle disagree on whether AP
/// is defined.
pub fn ap_sweep(instances: usize) -> (f64, usize) {
    let mut r = rng(16);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..instances {
        let images = r.random_range(1..4);
        let (dets, gts) = random_ap_instance(&mut r, images, 5, 10);
        match (average_precision(&scored(&dets), &gts, 0.5), ap_reference(&dets, &gts, 0.5)) {
            (Some(g), Some(w)) => {
                worst = worst.max((g - w).abs());
                checked += 1;
            }
            (None, None) => {}
            other => panic!("definedness differs: {other:?}"),
        }
    }
    (worst, checked)
}
