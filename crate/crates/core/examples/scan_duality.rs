//! The same discretized system evaluated as a recurrence and as a causal
//! convolution with its unrolled kernel.

use hgmn::ssm::{lti_conv_apply, lti_conv_kernel, lti_scan, zoh_discretize, LtiParams, StateMatrix};

fn main() -> hgmn::Result<()> {
    let p = LtiParams {
        a: StateMatrix::Diagonal(vec![-0.5, -1.0, -2.0, -4.0]),
        b: vec![1.0, 0.5, -0.5, 0.25],
        c: vec![0.3, -0.7, 1.1, 0.4],
        delta: 0.1,
    };
    let d = zoh_discretize(&p)?;
    let x: Vec<f64> = (0..32).map(|t| (t as f64 * 0.4).sin()).collect();
    let recurrent = lti_scan(&d, &p.c, &x, None)?;
    let kernel = lti_conv_kernel(&d, &p.c, x.len())?;
    let convolved = lti_conv_apply(&kernel, &x)?;
    println!("kernel head: {:.5?}", &kernel[..6]);
    for t in (0..x.len()).step_by(6) {
        println!("t={t:>2}  scan {:+.12}  conv {:+.12}", recurrent[t], convolved[t]);
    }
    let err = recurrent.iter().zip(&convolved).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max difference {err:.2e}");
    Ok(())
}
