//! Loss primitives. All reductions accumulate in `f64`.

use super::sigmoid;
use crate::autograd::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Norm floor below which [`cosine_loss`] falls back to zero.
pub const COSINE_EPS: f64 = 1e-8;

struct CosineStats {
    dot: f64,
    na: f64,
    nb: f64,
}

fn cosine_stats(a: &[f32], b: &[f32]) -> CosineStats {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    CosineStats { dot, na, nb }
}

impl CosineStats {
    fn degenerate(&self) -> bool {
        self.na.sqrt() <= COSINE_EPS || self.nb.sqrt() <= COSINE_EPS
    }

    /// A single square root over the product keeps `cos(a, c*a) == 1`
    /// exactly for power-of-two `c`.
    fn cos(&self) -> f64 {
        (self.dot / (self.na * self.nb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// `1 - a.b / (|a| |b|)` on two equal-length slices; `0` when either norm is
/// below [`COSINE_EPS`].
pub fn cosine_loss(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_loss",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let st = cosine_stats(a, b);
    if st.degenerate() {
        return Ok(0.0);
    }
    Ok((1.0 - st.cos()) as f32)
}

struct CosineBackward;

impl Backward for CosineBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        let st = cosine_stats(a.data(), b.data());
        let g = ctx.grad.data()[0] as f64;
        if st.degenerate() {
            return Ok(vec![
                ctx.needs(0).then(|| Tensor::zeros(a.shape().to_vec())),
                ctx.needs(1).then(|| Tensor::zeros(b.shape().to_vec())),
            ]);
        }
        let cos = st.dot / (st.na * st.nb).sqrt();
        let inv_ab = 1.0 / (st.na * st.nb).sqrt();
        // d(1 - cos)/dx = -(y / (|x||y|) - cos * x / |x|^2)
        let grad_of = |x: &Tensor, y: &Tensor, nx: f64| {
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .map(|(&xi, &yi)| (-g * (yi as f64 * inv_ab - cos * xi as f64 / nx)) as f32)
                .collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        };
        Ok(vec![
            ctx.needs(0).then(|| grad_of(a, b, st.na)),
            ctx.needs(1).then(|| grad_of(b, a, st.nb)),
        ])
    }
}

struct SmoothL1Backward {
    beta: f32,
}

impl Backward for SmoothL1Backward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (p, t) = (ctx.inputs[0], ctx.inputs[1]);
        let scale = ctx.grad.data()[0] / p.numel() as f32;
        let d: Vec<f32> = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&x, &y)| {
                let r = x - y;
                let dr = if r.abs() < self.beta { r / self.beta } else { r.signum() };
                dr * scale
            })
            .collect();
        let neg = ctx.needs(1).then(|| Tensor::from_parts(t.shape().to_vec(), d.iter().map(|v| -v).collect()));
        Ok(vec![ctx.needs(0).then(|| Tensor::from_parts(p.shape().to_vec(), d)), neg])
    }
}

struct BceBackward;

impl Backward for BceBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (x, t) = (ctx.inputs[0], ctx.inputs[1]);
        let scale = ctx.grad.data()[0] / x.numel() as f32;
        let dx = x.data().iter().zip(t.data()).map(|(&x, &t)| (sigmoid(x) - t) * scale).collect();
        let dt = ctx.needs(1).then(|| {
            Tensor::from_parts(t.shape().to_vec(), x.data().iter().map(|&x| -x * scale).collect())
        });
        Ok(vec![ctx.needs(0).then(|| Tensor::from_parts(x.shape().to_vec(), dx)), dt])
    }
}

struct SoftmaxCeBackward {
    classes: Vec<usize>,
}

/// Numerically stable softmax of one row.
fn softmax_row(row: &[f32]) -> Vec<f64> {
    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Backward for SoftmaxCeBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let x = ctx.inputs[0];
        let k = x.shape()[1];
        let scale = ctx.grad.data()[0] as f64 / self.classes.len() as f64;
        let mut d = Vec::with_capacity(x.numel());
        for (row, &cls) in x.data().chunks_exact(k).zip(&self.classes) {
            for (j, p) in softmax_row(row).into_iter().enumerate() {
                let onehot = if j == cls { 1.0 } else { 0.0 };
                d.push(((p - onehot) * scale) as f32);
            }
        }
        Ok(vec![Some(Tensor::from_parts(x.shape().to_vec(), d))])
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tape {
    /// Cosine distance between two tensors of equal element count, each
    /// read as a flat vector.
    pub fn cosine_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = cosine_loss(ta.data(), tb.data())?;
        if cosine_stats(ta.data(), tb.data()).degenerate() {
            log::debug!("cosine_loss: near-zero norm, contributing 0");
        }
        self.record("cosine_loss", Tensor::scalar(value), &[a, b], CosineBackward)
    }

    /// Mean Huber-style loss; quadratic below `beta`.
    pub fn smooth_l1(&mut self, pred: Var, target: Var, beta: f32) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        same_shape("smooth_l1", p, t)?;
        if beta <= 0.0 {
            return Err(Error::invalid("smooth_l1", "beta must be positive"));
        }
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&x, &y)| {
                let r = (x - y).abs() as f64;
                let b = beta as f64;
                if r < b { 0.5 * r * r / b } else { r - 0.5 * b }
            })
            .sum();
        let out = Tensor::scalar((s / p.numel() as f64) as f32);
        self.record("smooth_l1", out, &[pred, target], SmoothL1Backward { beta })
    }

    /// Mean binary cross-entropy on logits.
    pub fn bce_with_logits(&mut self, logits: Var, target: Var) -> Result<Var> {
        let (x, t) = (self.value(logits), self.value(target));
        same_shape("bce_with_logits", x, t)?;
        let s: f64 = x
            .data()
            .iter()
            .zip(t.data())
            .map(|(&x, &t)| {
                let (x, t) = (x as f64, t as f64);
                x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
            })
            .sum();
        let out = Tensor::scalar((s / x.numel() as f64) as f32);
        self.record("bce_with_logits", out, &[logits, target], BceBackward)
    }

    /// Mean softmax cross-entropy of `logits [N,K]` against `classes`.
    pub fn softmax_ce(&mut self, logits: Var, classes: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let &[n, k] = x.shape() else {
            return Err(Error::invalid("softmax_ce", format!("expected [N,K] logits, got {:?}", x.shape())));
        };
        if classes.len() != n {
            return Err(Error::ShapeMismatch {
                op: "softmax_ce",
                lhs: x.shape().to_vec(),
                rhs: vec![classes.len()],
            });
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= k) {
            return Err(Error::invalid("softmax_ce", format!("class {bad} out of range for {k} classes")));
        }
        let mut s = 0.0f64;
        for (row, &cls) in x.data().chunks_exact(k).zip(classes) {
            let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse = m + row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
            s += lse - row[cls] as f64;
        }
        let out = Tensor::scalar((s / n as f64) as f32);
        self.record("softmax_ce", out, &[logits], SoftmaxCeBackward { classes: classes.to_vec() })
    }
}
