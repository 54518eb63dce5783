//! Bilinear resampling with half-pixel centers.
//!
//! Output pixel `i` reads source coordinate `(i + 0.5) * in / out - 0.5`,
//! clamped to `[0, in - 1]`. Interpolation uses the `a + w * (b - a)` form so
//! constant inputs reproduce exactly.

use crate::autograd::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One output coordinate's two source taps and the weight of the upper tap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub w: f32,
}

/// Tap for a continuous source coordinate, clamped to the valid range.
#[inline]
pub(crate) fn tap_at(coord: f32, len: usize) -> Tap {
    let c = coord.clamp(0.0, (len - 1) as f32);
    let lo = (c.floor() as usize).min(len - 1);
    let hi = (lo + 1).min(len - 1);
    Tap {
        lo,
        hi,
        w: c - lo as f32,
    }
}

pub(crate) fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let c = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = (c.floor() as usize).min(input - 1);
            Tap {
                lo,
                hi: (lo + 1).min(input - 1),
                w: (c - lo as f64) as f32,
            }
        })
        .collect()
}

#[inline]
pub(crate) fn lerp(a: f32, b: f32, w: f32) -> f32 {
    a + w * (b - a)
}

fn check(shape: &[usize], out_h: usize, out_w: usize) -> Result<(usize, usize, usize)> {
    let &[c, h, w] = shape else {
        return Err(Error::invalid(
            "bilinear_resize",
            format!("expected [C,H,W], got {shape:?}"),
        ));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_resize", "output extent must be at least 1"));
    }
    Ok((c, h, w))
}

/// Resizes a `[C,H,W]` tensor to `[C,out_h,out_w]`.
pub fn bilinear_resize_forward(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = check(input.shape(), out_h, out_w)?;
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let (ty, tx) = (axis_taps(h, out_h), axis_taps(w, out_w));
    let x = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for t in &ty {
            let (r0, r1) = (&plane[t.lo * w..(t.lo + 1) * w], &plane[t.hi * w..(t.hi + 1) * w]);
            for s in &tx {
                let top = lerp(r0[s.lo], r0[s.hi], s.w);
                let bottom = lerp(r1[s.lo], r1[s.hi], s.w);
                out.push(lerp(top, bottom, t.w));
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

struct ResizeBackward {
    ty: Vec<Tap>,
    tx: Vec<Tap>,
}

impl Backward for ResizeBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let shape = ctx.inputs[0].shape();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let (oh, ow) = (self.ty.len(), self.tx.len());
        let mut dx = vec![0.0f32; c * h * w];
        let g = ctx.grad.data();
        for ch in 0..c {
            let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
            for (oy, t) in self.ty.iter().enumerate() {
                for (ox, s) in self.tx.iter().enumerate() {
                    let gv = g[(ch * oh + oy) * ow + ox];
                    let (gt, gb) = (gv * (1.0 - t.w), gv * t.w);
                    plane[t.lo * w + s.lo] += gt * (1.0 - s.w);
                    plane[t.lo * w + s.hi] += gt * s.w;
                    plane[t.hi * w + s.lo] += gb * (1.0 - s.w);
                    plane[t.hi * w + s.hi] += gb * s.w;
                }
            }
        }
        Ok(vec![Some(Tensor::from_parts(shape.to_vec(), dx))])
    }
}

impl Tape {
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (_, h, w) = check(self.shape(x), out_h, out_w)?;
        let out = bilinear_resize_forward(self.value(x), out_h, out_w)?;
        let bw = ResizeBackward {
            ty: axis_taps(h, out_h),
            tx: axis_taps(w, out_w),
        };
        self.record("bilinear_resize", out, &[x], bw)
    }
}
