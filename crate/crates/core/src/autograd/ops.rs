//! Elementwise, reduction, and shape operations.
//!
//! Binary ops require identical shapes; the only broadcast is tensor-by-scalar
//! through [`Tape::scale`] and [`Tape::add_scalar`].

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use super::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

struct BinaryBackward(Binary);

impl Backward for BinaryBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
        let ga = ctx.needs(0).then(|| match self.0 {
            Binary::Add | Binary::Sub => g.clone(),
            Binary::Mul => zip_map(g, b, |g, b| g * b),
        });
        let gb = ctx.needs(1).then(|| match self.0 {
            Binary::Add => g.clone(),
            Binary::Sub => g.map(|v| -v),
            Binary::Mul => zip_map(g, a, |g, a| g * a),
        });
        Ok(vec![ga, gb])
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

struct ScaleBackward(f32);

impl Backward for ScaleBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let s = self.0;
        Ok(vec![Some(ctx.grad.map(|g| g * s))])
    }
}

struct IdentityBackward;

impl Backward for IdentityBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(ctx.grad.clone())])
    }
}

struct SumBackward {
    scale: f32,
}

impl Backward for SumBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let g = ctx.grad.data()[0] * self.scale;
        Ok(vec![Some(Tensor::full(ctx.inputs[0].shape().to_vec(), g))])
    }
}

struct ReshapeBackward;

impl Backward for ReshapeBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(Tensor::from_parts(
            ctx.inputs[0].shape().to_vec(),
            ctx.grad.data().to_vec(),
        ))])
    }
}

struct MatmulBackward {
    m: usize,
    k: usize,
    n: usize,
}

impl Backward for MatmulBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let Self { m, k, n } = *self;
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
        let ga = ctx.needs(0).then(|| {
            let mut out = vec![0.0; m * k];
            gemm_nt(g.data(), b.data(), &mut out, m, n, k);
            Tensor::from_parts(vec![m, k], out)
        });
        let gb = ctx.needs(1).then(|| {
            let mut out = vec![0.0; k * n];
            gemm_tn(a.data(), g.data(), &mut out, k, m, n);
            Tensor::from_parts(vec![k, n], out)
        });
        Ok(vec![ga, gb])
    }
}

struct ConcatBackward {
    sizes: Vec<usize>,
}

impl Backward for ConcatBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.sizes.len());
        for (i, &len) in self.sizes.iter().enumerate() {
            let part = ctx.needs(i).then(|| {
                Tensor::from_parts(
                    ctx.inputs[i].shape().to_vec(),
                    ctx.grad.data()[offset..offset + len].to_vec(),
                )
            });
            out.push(part);
            offset += len;
        }
        Ok(out)
    }
}

struct SelectBackward {
    rows: Vec<usize>,
}

impl Backward for SelectBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let x = ctx.inputs[0];
        let row = x.numel() / x.shape()[0];
        let mut dx = Tensor::zeros(x.shape().to_vec());
        let d = dx.data_mut();
        for (i, &r) in self.rows.iter().enumerate() {
            let g = &ctx.grad.data()[i * row..(i + 1) * row];
            for (a, b) in d[r * row..(r + 1) * row].iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(vec![Some(dx)])
    }
}

impl Tape {
    fn binary(&mut self, op: &'static str, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = match kind {
            Binary::Add => zip_map(ta, tb, |x, y| x + y),
            Binary::Sub => zip_map(ta, tb, |x, y| x - y),
            Binary::Mul => zip_map(ta, tb, |x, y| x * y),
        };
        self.record(op, out, &[a, b], BinaryBackward(kind))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", Binary::Sub, a, b)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", Binary::Mul, a, b)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, s: f32) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        self.record("scale", out, &[a], ScaleBackward(s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        self.record("add_scalar", out, &[a], IdentityBackward)
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        };
        let (&[m, k], &[k2, n]) = (ta.shape(), tb.shape()) else {
            return Err(mismatch());
        };
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(ta.data(), tb.data(), &mut out, m, k, n);
        let out = Tensor::from_parts(vec![m, n], out);
        self.record("matmul", out, &[a, b], MatmulBackward { m, k, n })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        self.record("sum", Tensor::scalar(s as f32), &[a], SumBackward { scale: 1.0 })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = t.numel();
        let s: f64 = t.data().iter().map(|&v| v as f64).sum();
        let out = Tensor::scalar((s / n as f64) as f32);
        self.record("mean", out, &[a], SumBackward { scale: 1.0 / n as f32 })
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.record("reshape", out, &[a], ReshapeBackward)
    }

    /// Flattens to rank 1.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        self.reshape(a, [n])
    }

    /// Concatenates along the leading axis; trailing extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("concat", "no inputs"));
        };
        let tail = self.value(first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != tail[..] {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            lead += t.shape()[0];
            sizes.push(t.numel());
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.record("concat", Tensor::from_parts(shape, data), parts, ConcatBackward { sizes })
    }

    /// Picks entries of the leading axis, in order; repeats are allowed.
    pub fn select(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let lead = t.shape()[0];
        if rows.is_empty() {
            return Err(Error::invalid("select", "no rows selected"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= lead) {
            return Err(Error::invalid("select", format!("row {bad} out of range {lead}")));
        }
        let row = t.numel() / lead;
        let mut data = Vec::with_capacity(rows.len() * row);
        for &r in rows {
            data.extend_from_slice(&t.data()[r * row..(r + 1) * row]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        let out = Tensor::from_parts(shape, data);
        self.record("select", out, &[a], SelectBackward { rows: rows.to_vec() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_vectors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn select_routes_gradient_to_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new([3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let s = tape.select(x, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(s).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let l = tape.sum(s).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(tape.select(x, &[3]).is_err());
    }

    #[test]
    fn mean_of_constant() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full([3, 5], 2.75));
        let m = tape.mean(a).unwrap();
        assert_eq!(tape.value(m).item().unwrap(), 2.75);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([3, 2]));
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
        assert!(tape.matmul(a, a).is_err());
    }

    #[test]
    fn concat_and_split_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new([1, 2], vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::new([2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[3, 2]);
        let sq = tape.mul(c, c).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(a).data(), &[2.0, 4.0]);
        assert_eq!(g.wrt(b).data(), &[6.0, 8.0, 10.0, 12.0]);
    }

    #[test]
    fn sub_and_scale_gradients() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::from_vec(vec![0.5, 0.5]));
        let d = tape.sub(a, b).unwrap();
        let s = tape.scale(d, 3.0).unwrap();
        let loss = tape.sum(s).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(a).data(), &[3.0, 3.0]);
        assert_eq!(g.wrt(b).data(), &[-3.0, -3.0]);
    }
}
