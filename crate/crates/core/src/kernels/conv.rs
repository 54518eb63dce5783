//! 2-D cross-correlation via im2col.

use crate::autograd::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::autograd::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn new(input: &[usize], weight: &[usize], bias: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let mismatch = |rhs: &[usize]| Error::ShapeMismatch {
            op: "conv2d",
            lhs: input.to_vec(),
            rhs: rhs.to_vec(),
        };
        let (&[cin, h, w], &[cout, cin2, kh, kw]) = (input, weight) else {
            return Err(mismatch(weight));
        };
        if cin != cin2 {
            return Err(mismatch(weight));
        }
        if bias != [cout] {
            return Err(mismatch(bias));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        if ph < kh || pw < kw {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {ph}x{pw}"),
            ));
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("non-integral output extent for input {h}x{w}, kernel {kh}x{kw}, stride {stride}, pad {pad}"),
            ));
        }
        Ok(ConvGeom {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh: (ph - kh) / stride + 1,
            ow: (pw - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    /// Maps output column `o` and kernel offset `k` to an input index, or
    /// `None` when the tap falls in the zero padding.
    #[inline]
    fn src(&self, o: usize, k: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0).then_some(i as usize)
    }

    fn im2col(&self, x: &[f32]) -> Vec<f32> {
        let p = self.p();
        let mut cols = vec![0.0; self.k() * p];
        for c in 0..self.cin {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky).filter(|&iy| iy < self.h) else {
                            continue;
                        };
                        let src_row = &x[(c * self.h + iy) * self.w..(c * self.h + iy + 1) * self.w];
                        let d = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        for (ox, slot) in d.iter_mut().enumerate() {
                            if let Some(ix) = self.src(ox, kx).filter(|&ix| ix < self.w) {
                                *slot = src_row[ix];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32]) -> Vec<f32> {
        let p = self.p();
        let mut x = vec![0.0; self.cin * self.h * self.w];
        for c in 0..self.cin {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky).filter(|&iy| iy < self.h) else {
                            continue;
                        };
                        let base = (c * self.h + iy) * self.w;
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kx).filter(|&ix| ix < self.w) {
                                x[base + ix] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// Forward convolution on plain tensors: `input [Cin,H,W]`,
/// `weight [Cout,Cin,kh,kw]`, `bias [Cout]` → `[Cout,H2,W2]`.
pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeom::new(input.shape(), weight.shape(), bias.shape(), stride, pad)?;
    Ok(forward(&g, input, weight, bias))
}

fn forward(g: &ConvGeom, input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let p = g.p();
    let cols = g.im2col(input.data());
    let mut out = vec![0.0; g.cout * p];
    for (o, row) in out.chunks_exact_mut(p).enumerate() {
        row.fill(bias.data()[o]);
    }
    gemm_nn(weight.data(), &cols, &mut out, g.cout, g.k(), p);
    Tensor::from_parts(vec![g.cout, g.oh, g.ow], out)
}

struct Conv2dBackward(ConvGeom);

impl Backward for Conv2dBackward {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let g = &self.0;
        let (x, w, b) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2]);
        let dy = ctx.grad.data();
        let (k, p) = (g.k(), g.p());

        let dw = ctx.needs(1).then(|| {
            let cols = g.im2col(x.data());
            let mut dw = vec![0.0; g.cout * k];
            gemm_nt(dy, &cols, &mut dw, g.cout, p, k);
            Tensor::from_parts(w.shape().to_vec(), dw)
        });
        let db = ctx.needs(2).then(|| {
            let sums = dy.chunks_exact(p).map(|r| r.iter().sum()).collect();
            Tensor::from_parts(b.shape().to_vec(), sums)
        });
        let dx = ctx.needs(0).then(|| {
            let mut dcols = vec![0.0; k * p];
            gemm_tn(w.data(), dy, &mut dcols, k, g.cout, p);
            Tensor::from_parts(x.shape().to_vec(), g.col2im(&dcols))
        });
        Ok(vec![dx, dw, db])
    }
}

impl Tape {
    /// Zero-padded cross-correlation. Errors when the output extent
    /// `(H + 2*pad - kh) / stride + 1` is not integral.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let g = ConvGeom::new(self.shape(input), self.shape(weight), self.shape(bias), stride, pad)?;
        let out = forward(&g, self.value(input), self.value(weight), self.value(bias));
        self.record("conv2d", out, &[input, weight, bias], Conv2dBackward(g))
    }
}
