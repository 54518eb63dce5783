//! Row-major matrix kernels shared by matmul and convolution.
//!
//! All routines accumulate into `out`; callers zero it first when needed.
//! The blocked kernel comes from `matrixmultiply`; transposes are expressed
//! through strides.

/// `c[m,n] += a * b` with arbitrary row/column strides on `a` and `b`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn sgemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    c: &mut [f32],
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts in the callers pin the slice lengths to the
    // extents and strides passed here, so every access is in bounds.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_nn(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    assert!(a.len() == m * k && b.len() == k * n && out.len() == m * n);
    sgemm_acc(m, k, n, a, k as isize, 1, b, n as isize, 1, out);
}

/// `out[m,n] += a[m,k] * b[n,k]^T`
pub(crate) fn gemm_nt(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    assert!(a.len() == m * k && b.len() == n * k && out.len() == m * n);
    sgemm_acc(m, k, n, a, k as isize, 1, b, 1, k as isize, out);
}

/// `out[m,n] += a[k,m]^T * b[k,n]`
pub(crate) fn gemm_tn(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    assert!(a.len() == k * m && b.len() == k * n && out.len() == m * n);
    sgemm_acc(m, k, n, a, 1, m as isize, b, n as isize, 1, out);
}
