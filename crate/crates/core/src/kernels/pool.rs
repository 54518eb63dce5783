//! ReLU and max pooling.

use crate::autograd::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct ReluBackward;

impl Backward for ReluBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let data = ctx
            .inputs[0]
            .data()
            .iter()
            .zip(ctx.grad.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect();
        Ok(vec![Some(Tensor::from_parts(ctx.grad.shape().to_vec(), data))])
    }
}

/// Output of a max pool plus, for each output cell, the flat input index
/// that won the window.
pub(crate) struct Pooled {
    pub out: Tensor,
    pub argmax: Vec<usize>,
}

/// Max pooling over `[C,H,W]` with square window `k` and stride `stride`.
/// Ties go to the lowest linear index inside the window.
pub(crate) fn max_pool_forward(input: &Tensor, k: usize, stride: usize) -> Result<Pooled> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::invalid("max_pool2d", format!("expected [C,H,W], got {:?}", input.shape())));
    };
    if k == 0 || stride == 0 {
        return Err(Error::invalid("max_pool2d", "window and stride must be positive"));
    }
    if k > h || k > w {
        return Err(Error::invalid(
            "max_pool2d",
            format!("window {k} exceeds extent {h}x{w}"),
        ));
    }
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                let mut best_v = f32::NEG_INFINITY;
                for dy in 0..k {
                    let row = (ch * h + oy * stride + dy) * w + ox * stride;
                    for dx in 0..k {
                        let v = x[row + dx];
                        if best == usize::MAX || v > best_v {
                            best = row + dx;
                            best_v = v;
                        }
                    }
                }
                out.push(best_v);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled {
        out: Tensor::from_parts(vec![c, oh, ow], out),
        argmax,
    })
}

struct MaxPoolBackward {
    argmax: Vec<usize>,
}

impl Backward for MaxPoolBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let mut dx = Tensor::zeros(ctx.inputs[0].shape().to_vec());
        let d = dx.data_mut();
        for (&src, &g) in self.argmax.iter().zip(ctx.grad.data()) {
            d[src] += g;
        }
        Ok(vec![Some(dx)])
    }
}

impl Tape {
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.record("relu", out, &[x], ReluBackward)
    }

    /// Max pooling; the gradient of each output routes to its argmax.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let Pooled { out, argmax } = max_pool_forward(self.value(x), k, stride)?;
        self.record("max_pool2d", out, &[x], MaxPoolBackward { argmax })
    }
}
