//! Zero-order-hold discretization: the diagonal closed form, the augmented
//! matrix exponential for a dense state matrix, and the `A → 0` limit.

use hgmn::ssm::{zoh_discretize, LtiParams, StateMatrix};

fn main() -> hgmn::Result<()> {
    let scalar = zoh_discretize(&LtiParams {
        a: StateMatrix::Diagonal(vec![-1.0]),
        b: vec![1.0],
        c: vec![1.0],
        delta: std::f64::consts::LN_2,
    })?;
    println!("A=-1, dt=ln 2:     A_bar={:?}  B_bar={:?}", scalar.a_bar, scalar.b_bar);

    // a damped rotation has no diagonal form over the reals
    let dense = zoh_discretize(&LtiParams {
        a: StateMatrix::Dense { n: 2, data: vec![-0.1, 1.0, -1.0, -0.1] },
        b: vec![1.0, 0.0],
        c: vec![1.0, 0.0],
        delta: 0.5,
    })?;
    println!("damped rotation:   A_bar={:?}\n                   B_bar={:?}", dense.a_bar.to_dense(), dense.b_bar);

    for a in [-1e-3, -1e-9, 0.0] {
        let d = zoh_discretize(&LtiParams {
            a: StateMatrix::Diagonal(vec![a]),
            b: vec![2.0],
            c: vec![1.0],
            delta: 0.25,
        })?;
        println!("A={a:<6e} dt=0.25:  B_bar={:.15}  (dt*B = 0.5)", d.b_bar[0]);
    }
    Ok(())
}
