//! Kernel equivalence suites shared by `hgmn selftest`, the acceptance
//! binary and the examples. Each returns the worst error it observed so
//! callers can apply their own tolerance.

use rand::{Rng, SeedableRng};

use crate::error::Result;
use crate::init::ModelRng;
use crate::ssm::{
    lti_conv_apply, lti_conv_kernel, lti_scan, selective_scan_kernel, zoh_discretize, DiscreteParams, LtiParams,
    StateMatrix,
};

pub const DUALITY_TOL: f64 = 1e-9;
pub const ZOH_TOL: f64 = 1e-12;
pub const LIMIT_TOL: f64 = 1e-6;
pub const SERIES_TOL: f64 = 1e-10;
pub const REDUCTION_TOL: f64 = 1e-10;

/// Recurrence vs. convolution over `trials` random stable diagonal systems
/// (state size 1..=8, `Δ ∈ [1e-3, 1]`, length 1..=256).
pub fn scan_duality(trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ModelRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.gen_range(1..=8);
        let len = rng.gen_range(1..=256);
        let p = LtiParams {
            a: StateMatrix::Diagonal((0..n).map(|_| -rng.gen_range(0.01..2.0)).collect()),
            b: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            c: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            delta: rng.gen_range(1e-3..=1.0),
        };
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = zoh_discretize(&p)?;
        let rec = lti_scan(&d, &p.c, &x, None)?;
        let conv = lti_conv_apply(&lti_conv_kernel(&d, &p.c, len)?, &x)?;
        for (r, c) in rec.iter().zip(&conv) {
            worst = worst.max((r - c).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy)]
pub struct ZohReport {
    /// `|Ā − 0.5|` for `A = −1, Δ = ln 2`.
    pub scalar_a: f64,
    /// `|B̄ − 0.5·B|` for the same system.
    pub scalar_b: f64,
    /// `‖Ā − I‖∞` at `Δ = 1e-9`.
    pub small_step_a: f64,
    /// `‖B̄ − ΔB‖∞` at `Δ = 1e-9`.
    pub small_step_b: f64,
    /// Limit branch vs. the series `ΔB(1 + x/2 + x²/6)` as `ΔA → 0`.
    pub limit_vs_series: f64,
}

impl ZohReport {
    pub fn passes(&self) -> bool {
        self.scalar_a <= ZOH_TOL
            && self.scalar_b <= ZOH_TOL
            && self.small_step_a <= LIMIT_TOL
            && self.small_step_b <= ZOH_TOL
            && self.limit_vs_series <= SERIES_TOL
    }
}

fn diag(d: &DiscreteParams) -> &[f64] {
    match &d.a_bar {
        StateMatrix::Diagonal(v) => v,
        StateMatrix::Dense { .. } => unreachable!("diagonal input stays diagonal"),
    }
}

pub fn zoh_checks() -> Result<ZohReport> {
    let b = 0.8;
    let half = zoh_discretize(&LtiParams {
        a: StateMatrix::Diagonal(vec![-1.0]),
        b: vec![b],
        c: vec![1.0],
        delta: std::f64::consts::LN_2,
    })?;

    let a = vec![-3.0, -0.5, -1e-4, 2.0];
    let bs = vec![1.0, -2.0, 0.5, 0.25];
    let delta = 1e-9;
    let small = zoh_discretize(&LtiParams {
        a: StateMatrix::Diagonal(a),
        b: bs.clone(),
        c: vec![0.0; 4],
        delta,
    })?;

    let mut limit_vs_series: f64 = 0.0;
    for a in [0.0, 1e-13, -1e-13, -5e-13] {
        let d = zoh_discretize(&LtiParams {
            a: StateMatrix::Diagonal(vec![a]),
            b: vec![b],
            c: vec![1.0],
            delta: 1.0,
        })?;
        let series = b * (1.0 + a / 2.0 + a * a / 6.0);
        limit_vs_series = limit_vs_series.max((d.b_bar[0] - series).abs());
    }

    Ok(ZohReport {
        scalar_a: (diag(&half)[0] - 0.5).abs(),
        scalar_b: (half.b_bar[0] - 0.5 * b).abs(),
        small_step_a: diag(&small).iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max),
        small_step_b: small.b_bar.iter().zip(&bs).map(|(x, b)| (x - delta * b).abs()).fold(0.0, f64::max),
        limit_vs_series,
    })
}

/// Selective scan with input-independent Δ, B, C against [`lti_scan`] run
/// per channel on length-64 sequences, over `trials` random draws.
pub fn selective_reduces_to_lti(trials: usize, seed: u64) -> Result<f64> {
    let len = 64;
    let mut rng = ModelRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let channels = rng.gen_range(1..=4);
        let state = rng.gen_range(1..=8);
        let v: Vec<f64> = (0..len * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..channels * state).map(|_| -rng.gen_range(0.05..3.0)).collect();
        let dch: Vec<f64> = (0..channels).map(|_| rng.gen_range(1e-3..1.0)).collect();
        let bvec: Vec<f64> = (0..state).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cvec: Vec<f64> = (0..state).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let delta: Vec<f64> = (0..len).flat_map(|_| dch.clone()).collect();
        let b: Vec<f64> = (0..len).flat_map(|_| bvec.clone()).collect();
        let c: Vec<f64> = (0..len).flat_map(|_| cvec.clone()).collect();
        let out = selective_scan_kernel(&v, &delta, &a, &b, &c, &vec![0.0; channels], len, channels, state, true)?;
        for ch in 0..channels {
            let d = zoh_discretize(&LtiParams {
                a: StateMatrix::Diagonal(a[ch * state..(ch + 1) * state].to_vec()),
                b: bvec.clone(),
                c: cvec.clone(),
                delta: dch[ch],
            })?;
            let xs: Vec<f64> = (0..len).map(|t| v[t * channels + ch]).collect();
            let reference = lti_scan(&d, &cvec, &xs, None)?;
            for (t, r) in reference.iter().enumerate() {
                worst = worst.max((r - out.y[t * channels + ch]).abs());
            }
        }
    }
    Ok(worst)
}
