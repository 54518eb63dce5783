//! Finite-difference checks of every differentiable kernel and of the
//! composed distillation and detection losses.

mod common;

use common::cases::{run_case, CASES, TOLERANCE};

#[test]
fn every_kernel_matches_central_differences() {
    let mut failures = Vec::new();
    for (name, case) in CASES {
        let r = run_case(name, case);
        println!("{:<32} {} instances, max rel err {:.2e}", r.name, r.instances, r.max_rel_err);
        if !(r.max_rel_err < TOLERANCE) {
            failures.push(format!("{name}: {:.3e}", r.max_rel_err));
        }
    }
    assert!(failures.is_empty(), "gradient mismatch: {failures:?}");
}

#[test]
fn matmul_matches_central_differences() {
    let mut r = common::rng(21);
    for _ in 0..10 {
        let a = common::random_tensor(&mut r, &[3, 4], -1.0, 1.0);
        let b = common::random_tensor(&mut r, &[4, 2], -1.0, 1.0);
        let err = common::gradcheck(&[a, b], 1e-2, |t, v| t.matmul(v[0], v[1]));
        assert!(err < TOLERANCE, "{err:.3e}");
    }
}

/// Every parameter of a conv -> relu -> conv -> mean network. Inputs are
/// chosen so no pre-activation sits within the step of zero.
#[test]
fn conv_relu_mean_network_matches_central_differences() {
    let mut r = common::rng(22);
    let mut worst = 0.0f64;
    let mut instances = 0;
    while instances < 10 {
        let x = common::random_tensor(&mut r, &[2, 5, 5], -1.0, 1.0);
        let w1 = common::random_tensor(&mut r, &[3, 2, 3, 3], -0.5, 0.5);
        let b1 = common::random_tensor(&mut r, &[3], -0.5, 0.5);
        let w2 = common::random_tensor(&mut r, &[2, 3, 3, 3], -0.5, 0.5);
        let b2 = common::random_tensor(&mut r, &[2], -0.5, 0.5);
        let pre = cdfkd::kernels::conv2d_forward(&x, &w1, &b1, 1, 1).unwrap();
        if pre.data().iter().any(|v| v.abs() < 0.02) {
            continue;
        }
        instances += 1;
        let err = common::gradcheck(&[x, w1, b1, w2, b2], 1e-2, |t, v| {
            let h = t.conv2d(v[0], v[1], v[2], 1, 1)?;
            let h = t.relu(h)?;
            let y = t.conv2d(h, v[3], v[4], 1, 0)?;
            t.mean(y)
        });
        worst = worst.max(err);
    }
    println!("conv-relu-mean network max rel err {worst:.2e}");
    assert!(worst < TOLERANCE);
}
