//! Differentiable kernels used by the detector and the distillation losses.

mod conv;
mod loss;
mod pool;
mod resize;
mod roi_align;

pub use conv::conv2d_forward;
pub use loss::{cosine_loss, COSINE_EPS};
pub use resize::bilinear_resize_forward;
pub use roi_align::{roi_align_forward, FeatureMap, RoiAlignConfig, RoiAligned, RoiBox};

pub(crate) use resize::{axis_taps, lerp};

use crate::autograd::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Logistic function, stable for large magnitudes.
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct SigmoidBackward;

impl Backward for SigmoidBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let data = ctx.inputs[0]
            .data()
            .iter()
            .zip(ctx.grad.data())
            .map(|(&x, &g)| {
                let s = sigmoid(x);
                g * s * (1.0 - s)
            })
            .collect();
        Ok(vec![Some(Tensor::from_parts(ctx.grad.shape().to_vec(), data))])
    }
}

struct GatherBackward {
    cells: Vec<usize>,
}

impl Backward for GatherBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let x = ctx.inputs[0];
        let c = x.shape()[0];
        let l = x.numel() / c;
        let mut dx = Tensor::zeros(x.shape().to_vec());
        let d = dx.data_mut();
        for (i, &cell) in self.cells.iter().enumerate() {
            for ch in 0..c {
                d[ch * l + cell] += ctx.grad.data()[i * c + ch];
            }
        }
        Ok(vec![Some(dx)])
    }
}

impl Tape {
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.record("sigmoid", out, &[x], SigmoidBackward)
    }

    /// Reads a `[C, ...]` tensor as `[C, L]` and picks columns `cells`,
    /// returning `[cells.len(), C]`.
    pub fn gather_cells(&mut self, x: Var, cells: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let c = t.shape()[0];
        let l = t.numel() / c;
        if cells.is_empty() {
            return Err(Error::invalid("gather_cells", "no cells selected"));
        }
        if let Some(&bad) = cells.iter().find(|&&i| i >= l) {
            return Err(Error::invalid("gather_cells", format!("cell {bad} out of range {l}")));
        }
        let mut out = Vec::with_capacity(cells.len() * c);
        for &cell in cells {
            for ch in 0..c {
                out.push(t.data()[ch * l + cell]);
            }
        }
        let out = Tensor::from_parts(vec![cells.len(), c], out);
        self.record("gather_cells", out, &[x], GatherBackward { cells: cells.to_vec() })
    }
}
