//! Gradient-check cases, one per differentiable kernel or composed loss.

use cdfkd::autograd::{Tape, Var};
use cdfkd::detector::{assign_targets, detection_loss, HeadVars, SMOOTH_L1_BETA};
use cdfkd::distill::{global_distill_loss, instance_distill_loss};
use cdfkd::kernels::{RoiAlignConfig, RoiBox};
use cdfkd::scenes::Annotation;
use cdfkd::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{fm, gradcheck, random_tensor, rng, spaced_tensor};

pub const INSTANCES: usize = 10;
pub const TOLERANCE: f64 = 1e-3;
const EPS: f32 = 0.05;
/// Step for piecewise-linear kernels, below the value spacing of their inputs.
const KINK_EPS: f32 = 0.01;

pub struct CaseResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

fn random_box(rng: &mut ChaCha8Rng, extent: f32, min: f32) -> RoiBox {
    let w = rng.random_range(min..extent * 0.7);
    let h = rng.random_range(min..extent * 0.7);
    let x0 = rng.random_range(0.0..extent - w);
    let y0 = rng.random_range(0.0..extent - h);
    RoiBox::new(x0, y0, x0 + w, y0 + h).unwrap()
}

fn conv(rng: &mut ChaCha8Rng, i: usize) -> f64 {
    let (stride, pad) = if i % 2 == 0 { (1, 1) } else { (2, 0) };
    let x = random_tensor(rng, &[2, 5, 5], -1.0, 1.0);
    let w = random_tensor(rng, &[3, 2, 3, 3], -0.5, 0.5);
    let b = random_tensor(rng, &[3], -0.5, 0.5);
    gradcheck(&[x, w, b], EPS, |t, v| t.conv2d(v[0], v[1], v[2], stride, pad))
}

fn max_pool(rng: &mut ChaCha8Rng, _: usize) -> f64 {
    let x = spaced_tensor(rng, &[2, 4, 6], 0.05);
    gradcheck(&[x], KINK_EPS, |t, v| t.max_pool2d(v[0], 2, 2))
}

fn relu(rng: &mut ChaCha8Rng, _: usize) -> f64 {
    let x = spaced_tensor(rng, &[3, 4], 0.05);
    gradcheck(&[x], KINK_EPS, |t, v| t.relu(v[0]))
}

fn resize(rng: &mut ChaCha8Rng, _: usize) -> f64 {
    let x = random_tensor(rng, &[2, 3, 4], -1.0, 1.0);
    let (oh, ow) = (rng.random_range(1..8), rng.random_range(1..8));
    gradcheck(&[x], EPS, |t, v| t.bilinear_resize(v[0], oh, ow))
}

fn roi_align(rng: &mut ChaCha8Rng, _: usize) -> f64 {
    let x = random_tensor(rng, &[2, 5, 5], -1.0, 1.0);
    let boxes = [random_box(rng, 20.0, 2.0), random_box(rng, 20.0, 2.0)];
    let cfg = RoiAlignConfig {
        out: 3,
        samples: 2,
        ..RoiAlignConfig::default()
    };
    gradcheck(&[x], EPS, |t, v| {
        Ok(t.roi_align(fm(v[0], 4), &boxes, &cfg)?.features.expect("boxes are not degenerate"))
    })
}

fn cosine(rng: &mut ChaCha8Rng, _: usize) -> f64 {
    let a = random_tensor(rng, &[12], -1.0, 1.0);
    let b = random_tensor(rng, &[12], -1.0, 1.0);
    gradcheck(&[a, b], EPS, |t, v| t.cosine_loss(v[0], v[1]))
}

fn smooth_l1(rng: &mut ChaCha8Rng, _: usize) -> f64 {
    let beta = 0.5;
    let target = random_tensor(rng, &[8], -1.0, 1.0);
    // keep every residual clear of the quadratic/linear switch at `beta`
    let pred: Vec<f32> = target
        .data()
        .iter()
        .map(|&y| {
            let mut d: f32 = rng.random_range(-1.5..1.5);
            while (d.abs() - beta).abs() < 0.05 {
                d = rng.random_range(-1.5..1.5);
            }
            y + d
        })
        .collect();
    let pred = Tensor::new([8], pred).unwrap();
    gradcheck(&[pred, target], EPS, |t, v| t.smooth_l1(v[0], v[1], beta))
}

fn bce(rng: &mut ChaCha8Rng, _: usize) -> f64 {
    let logits = random_tensor(rng, &[2, 3, 3], -3.0, 3.0);
    let targets = random_tensor(rng, &[2, 3, 3], 0.0, 1.0);
    gradcheck(&[logits], EPS, |t, v| {
        let y = t.constant(targets.clone());
        t.bce_with_logits(v[0], y)
    })
}

fn softmax_ce(rng: &mut ChaCha8Rng, _: usize) -> f64 {
    let logits = random_tensor(rng, &[4, 5], -2.0, 2.0);
    let classes: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
    gradcheck(&[logits], EPS, |t, v| t.softmax_ce(v[0], &classes))
}

fn sigmoid(rng: &mut ChaCha8Rng, _: usize) -> f64 {
    let x = random_tensor(rng, &[10], -4.0, 4.0);
    gradcheck(&[x], EPS, |t, v| t.sigmoid(v[0]))
}

/// Teacher map constant; student map smaller so the resize is exercised.
fn global_pipeline(rng: &mut ChaCha8Rng, _: usize) -> f64 {
    let ft = random_tensor(rng, &[3, 4, 4], -1.0, 1.0);
    let side = rng.random_range(2..5);
    let fs = random_tensor(rng, &[3, side, side], -1.0, 1.0);
    gradcheck(&[fs], EPS, |t, v| {
        let c = t.constant(ft.clone());
        global_distill_loss(t, c, v[0])
    })
}

/// Teacher RoIs on the clean map, student RoIs on a map downscaled by
/// `ratio` with correspondingly scaled boxes.
fn instance_pipeline(rng: &mut ChaCha8Rng, _: usize) -> f64 {
    let ft = random_tensor(rng, &[3, 6, 6], -1.0, 1.0);
    let fs = random_tensor(rng, &[3, 4, 4], -1.0, 1.0);
    let ratio = 4.0 / 6.0;
    let tb: Vec<RoiBox> = (0..3).map(|_| random_box(rng, 48.0, 6.0)).collect();
    let sb: Vec<RoiBox> = tb.iter().map(|b| b.scaled(ratio)).collect();
    let cfg = RoiAlignConfig {
        out: 3,
        samples: 2,
        ..RoiAlignConfig::default()
    };
    gradcheck(&[fs], EPS, |t, v| {
        let c = t.constant(ft.clone());
        let (l, _) = instance_distill_loss(t, fm(c, 8), fm(v[0], 8), &tb, &sb, &cfg)?;
        Ok(l.expect("instances are kept"))
    })
}

/// A value whose residual against `target` stays at least `margin` from
/// the smooth-L1 switch point in either direction and that lies in `range`.
fn off_kink(rng: &mut ChaCha8Rng, target: f32, margin: f32, range: (f32, f32)) -> f32 {
    loop {
        let d: f32 = rng.random_range(-0.6..0.6);
        let v = target + d;
        if (d.abs() - SMOOTH_L1_BETA).abs() >= margin && v > range.0 && v < range.1 {
            return v;
        }
    }
}

/// Detection loss with respect to all three head outputs. Positive-cell box
/// outputs are placed so no residual crosses the smooth-L1 kink under the
/// finite-difference step.
fn detection(rng: &mut ChaCha8Rng, _: usize) -> f64 {
    let (gh, gw, k) = (3, 3, 3);
    let cells = gh * gw;
    let annotations: Vec<Annotation> = (0..3)
        .map(|_| Annotation {
            class_id: rng.random_range(0..k),
            bbox: random_box(rng, 24.0, 4.0),
        })
        .collect();
    let targets = assign_targets(&annotations, gh, gw, 8);
    let obj = random_tensor(rng, &[1, gh, gw], -2.0, 2.0);
    let cls = random_tensor(rng, &[k, gh, gw], -2.0, 2.0);
    let mut bx = random_tensor(rng, &[4, gh, gw], -1.0, 1.0).data().to_vec();
    for p in &targets.positives {
        for a in 0..2 {
            // the offset passes through a sigmoid with slope at most 1/4
            let s = off_kink(rng, p.offset[a], 0.03, (0.05, 0.95));
            bx[a * cells + p.cell] = (s / (1.0 - s)).ln();
            bx[(2 + a) * cells + p.cell] = off_kink(rng, p.log_size[a], 0.08, (f32::MIN, f32::MAX));
        }
    }
    let bx = Tensor::new([4, gh, gw], bx).unwrap();
    gradcheck(&[obj, cls, bx], EPS, |t: &mut Tape, v: &[Var]| {
        let head = HeadVars {
            objectness: v[0],
            class_logits: v[1],
            box_deltas: v[2],
        };
        Ok(detection_loss(t, &head, &targets)?.total)
    })
}

type Case = fn(&mut ChaCha8Rng, usize) -> f64;

pub const CASES: [(&str, Case); 13] = [
    ("conv2d", conv),
    ("max_pool2d", max_pool),
    ("relu", relu),
    ("bilinear_resize", resize),
    ("roi_align", roi_align),
    ("cosine_loss", cosine),
    ("smooth_l1", smooth_l1),
    ("bce_with_logits", bce),
    ("softmax_ce", softmax_ce),
    ("sigmoid", sigmoid),
    ("global distillation pipeline", global_pipeline),
    ("instance distillation pipeline", instance_pipeline),
    ("detection loss", detection),
];

pub fn run_case(name: &'static str, case: Case) -> CaseResult {
    let mut r = rng(name.len() as u64 * 7919 + name.as_bytes()[0] as u64);
    let max_rel_err = (0..INSTANCES).map(|i| case(&mut r, i)).fold(0.0, f64::max);
    CaseResult {
        name,
        instances: INSTANCES,
        max_rel_err,
    }
}

pub fn gradient_suite() -> Vec<CaseResult> {
    CASES.iter().map(|&(name, case)| run_case(name, case)).collect()
}
