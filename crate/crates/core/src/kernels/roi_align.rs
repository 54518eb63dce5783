//! RoI Align over a single feature map.
//!
//! A pixel-space box maps to feature space by dividing by the stride, with no
//! rounding. Each of the `P x P` bins averages `S x S` bilinear samples at
//! the bin's half-step offsets. Feature cell `j` is centered at continuous
//! coordinate `j + 0.5`, so a sample at `u` reads index coordinate `u - 0.5`,
//! clamped to the map like [`super::resize`].

use serde::{Deserialize, Serialize};

use super::resize::{lerp, tap_at, Tap};
use crate::autograd::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned box in continuous image-pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiBox {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl RoiBox {
    pub fn new(x0: f32, y0: f32, x1: f32, y1: f32) -> Result<Self> {
        let b = RoiBox { x0, y0, x1, y1 };
        if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) || x1 <= x0 || y1 <= y0 {
            return Err(Error::invalid("box", format!("invalid box {b:?}")));
        }
        Ok(b)
    }

    pub fn width(&self) -> f32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f32 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.x0 + self.x1) * 0.5, (self.y0 + self.y1) * 0.5)
    }

    pub fn scaled(&self, r: f32) -> RoiBox {
        RoiBox {
            x0: self.x0 * r,
            y0: self.y0 * r,
            x1: self.x1 * r,
            y1: self.y1 * r,
        }
    }

    pub fn scaled_xy(&self, rx: f32, ry: f32) -> RoiBox {
        RoiBox {
            x0: self.x0 * rx,
            y0: self.y0 * ry,
            x1: self.x1 * rx,
            y1: self.y1 * ry,
        }
    }

    pub fn intersection(&self, other: &RoiBox) -> f32 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    /// Intersection over union; 0 when both boxes are empty.
    pub fn iou(&self, other: &RoiBox) -> f32 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// Intersection with `[0,w] x [0,h]`.
    pub fn clipped(&self, w: f32, h: f32) -> RoiBox {
        RoiBox {
            x0: self.x0.clamp(0.0, w),
            y0: self.y0.clamp(0.0, h),
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
        }
    }
}

/// Backbone features with their pixels-per-cell stride.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMap {
    pub var: Var,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiAlignConfig {
    /// Output bins per side.
    pub out: usize,
    /// Samples per bin side.
    pub samples: usize,
    /// Boxes narrower or shorter than this in feature cells are skipped.
    pub min_size: f32,
}

impl Default for RoiAlignConfig {
    fn default() -> Self {
        RoiAlignConfig {
            out: 7,
            samples: 2,
            min_size: 1e-6,
        }
    }
}

/// Result of [`Tape::roi_align`]: pooled features for the kept boxes in
/// input order, and the indices of boxes that degenerated.
#[derive(Debug)]
pub struct RoiAligned {
    pub features: Option<Var>,
    pub kept: Vec<usize>,
    pub skipped: Vec<usize>,
}

/// The four taps of one bilinear sample.
#[derive(Clone, Copy)]
struct Sample {
    y: Tap,
    x: Tap,
}

struct Plan {
    c: usize,
    h: usize,
    w: usize,
    out: usize,
    samples: usize,
    /// Per kept box, per bin, `samples^2` taps.
    taps: Vec<Sample>,
    kept: Vec<usize>,
    skipped: Vec<usize>,
}

fn plan(shape: &[usize], stride: usize, boxes: &[RoiBox], cfg: &RoiAlignConfig) -> Result<Plan> {
    let &[c, h, w] = shape else {
        return Err(Error::invalid("roi_align", format!("expected [C,H,W], got {shape:?}")));
    };
    if cfg.out == 0 || cfg.samples == 0 || stride == 0 {
        return Err(Error::invalid("roi_align", "output size, samples and stride must be positive"));
    }
    let (p, s) = (cfg.out, cfg.samples);
    let mut taps = Vec::new();
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    let inv = 1.0 / stride as f32;
    for (i, b) in boxes.iter().enumerate() {
        let (fx0, fy0) = (b.x0 * inv, b.y0 * inv);
        let (bw, bh) = ((b.x1 - b.x0) * inv, (b.y1 - b.y0) * inv);
        if !(bw >= cfg.min_size && bh >= cfg.min_size) {
            skipped.push(i);
            continue;
        }
        kept.push(i);
        let (bin_w, bin_h) = (bw / p as f32, bh / p as f32);
        for py in 0..p {
            for px in 0..p {
                for sy in 0..s {
                    let u = fy0 + (py as f32 + (sy as f32 + 0.5) / s as f32) * bin_h;
                    let y = tap_at(u - 0.5, h);
                    for sx in 0..s {
                        let v = fx0 + (px as f32 + (sx as f32 + 0.5) / s as f32) * bin_w;
                        taps.push(Sample {
                            y,
                            x: tap_at(v - 0.5, w),
                        });
                    }
                }
            }
        }
    }
    Ok(Plan {
        c,
        h,
        w,
        out: p,
        samples: s,
        taps,
        kept,
        skipped,
    })
}

impl Plan {
    fn per_bin(&self) -> usize {
        self.samples * self.samples
    }

    fn forward(&self, fm: &[f32]) -> Option<Tensor> {
        if self.kept.is_empty() {
            return None;
        }
        let (p2, n) = (self.out * self.out, self.per_bin());
        let hw = self.h * self.w;
        let mut out = Vec::with_capacity(self.kept.len() * self.c * p2);
        for o in 0..self.kept.len() {
            let box_taps = &self.taps[o * p2 * n..(o + 1) * p2 * n];
            for ch in 0..self.c {
                let plane = &fm[ch * hw..(ch + 1) * hw];
                for bin in box_taps.chunks_exact(n) {
                    // f64 accumulation keeps the average of equal samples exact
                    let mut acc = 0.0f64;
                    for t in bin {
                        let (r0, r1) = (t.y.lo * self.w, t.y.hi * self.w);
                        let top = lerp(plane[r0 + t.x.lo], plane[r0 + t.x.hi], t.x.w);
                        let bottom = lerp(plane[r1 + t.x.lo], plane[r1 + t.x.hi], t.x.w);
                        acc += lerp(top, bottom, t.y.w) as f64;
                    }
                    out.push((acc / n as f64) as f32);
                }
            }
        }
        Some(Tensor::from_parts(
            vec![self.kept.len(), self.c, self.out, self.out],
            out,
        ))
    }
}

struct RoiAlignBackward(Plan);

impl Backward for RoiAlignBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let plan = &self.0;
        let (p2, n) = (plan.out * plan.out, plan.per_bin());
        let hw = plan.h * plan.w;
        let mut dx = vec![0.0f32; plan.c * hw];
        let g = ctx.grad.data();
        let inv_n = 1.0 / n as f32;
        for o in 0..plan.kept.len() {
            let box_taps = &plan.taps[o * p2 * n..(o + 1) * p2 * n];
            for ch in 0..plan.c {
                let plane = &mut dx[ch * hw..(ch + 1) * hw];
                for (b, bin) in box_taps.chunks_exact(n).enumerate() {
                    let gv = g[(o * plan.c + ch) * p2 + b] * inv_n;
                    for t in bin {
                        let (gt, gb) = (gv * (1.0 - t.y.w), gv * t.y.w);
                        let (r0, r1) = (t.y.lo * plan.w, t.y.hi * plan.w);
                        plane[r0 + t.x.lo] += gt * (1.0 - t.x.w);
                        plane[r0 + t.x.hi] += gt * t.x.w;
                        plane[r1 + t.x.lo] += gb * (1.0 - t.x.w);
                        plane[r1 + t.x.hi] += gb * t.x.w;
                    }
                }
            }
        }
        Ok(vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), dx))])
    }
}

/// RoI Align on a plain tensor. Returns `None` for the features when every
/// box degenerated.
pub fn roi_align_forward(
    fm: &Tensor,
    stride: usize,
    boxes: &[RoiBox],
    cfg: &RoiAlignConfig,
) -> Result<(Option<Tensor>, Vec<usize>)> {
    let plan = plan(fm.shape(), stride, boxes, cfg)?;
    Ok((plan.forward(fm.data()), plan.skipped))
}

impl Tape {
    /// Pools `[O,C,P,P]` features for every non-degenerate box.
    pub fn roi_align(&mut self, fm: FeatureMap, boxes: &[RoiBox], cfg: &RoiAlignConfig) -> Result<RoiAligned> {
        let plan = plan(self.shape(fm.var), fm.stride, boxes, cfg)?;
        let kept = plan.kept.clone();
        let skipped = plan.skipped.clone();
        let features = match plan.forward(self.value(fm.var).data()) {
            Some(out) => Some(self.record("roi_align", out, &[fm.var], RoiAlignBackward(plan))?),
            None => None,
        };
        Ok(RoiAligned {
            features,
            kept,
            skipped,
        })
    }
}
