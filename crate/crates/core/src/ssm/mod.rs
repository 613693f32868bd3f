//! State-space kernels.
//!
//! The continuous system `h'(t) = A h(t) + B x(t)`, `y(t) = C h(t)` is
//! discretized with a zero-order hold over a step `Δ`:
//!
//! ```text
//! Ā = exp(ΔA)
//! B̄ = (ΔA)⁻¹ (exp(ΔA) − I) · ΔB
//! ```
//!
//! after which the recurrence `h_t = Ā h_{t−1} + B̄ x_t`, `y_t = C h_t` and
//! the causal convolution `y = x ∗ K̄` with
//! `K̄ = (CB̄, CĀB̄, …, CĀ^{M−1}B̄)` compute the same sequence map.
//! [`selective`] holds the input-dependent (Mamba) version used by the model.

pub mod selective;

pub use selective::{selective_scan_kernel, BlockDims, BlockTrace, ScanOutput, SelectiveSsmBlock};

use crate::error::{Error, Result};

/// State matrix storage.
#[derive(Debug, Clone, PartialEq)]
pub enum StateMatrix {
    Diagonal(Vec<f64>),
    /// Row-major `n × n`.
    Dense { n: usize, data: Vec<f64> },
}

impl StateMatrix {
    pub fn dim(&self) -> usize {
        match self {
            StateMatrix::Diagonal(d) => d.len(),
            StateMatrix::Dense { n, .. } => *n,
        }
    }

    /// `A · h`.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        match self {
            StateMatrix::Diagonal(d) => d.iter().zip(h).map(|(a, x)| a * x).collect(),
            StateMatrix::Dense { n, data } => (0..*n)
                .map(|i| data[i * n..(i + 1) * n].iter().zip(h).map(|(a, x)| a * x).sum())
                .collect(),
        }
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            StateMatrix::Diagonal(d) => {
                let n = d.len();
                let mut m = vec![0.0; n * n];
                for i in 0..n {
                    m[i * n + i] = d[i];
                }
                m
            }
            StateMatrix::Dense { data, .. } => data.clone(),
        }
    }
}

/// Continuous-time single-input single-output system.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiParams {
    pub a: StateMatrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteParams {
    pub a_bar: StateMatrix,
    pub b_bar: Vec<f64>,
}

/// Below this magnitude of `ΔA` the removable singularity of B̄ is replaced
/// by its limit `ΔB`.
pub const ZOH_LIMIT_THRESHOLD: f64 = 1e-12;

/// Zero-order-hold discretization.
pub fn zoh_discretize(p: &LtiParams) -> Result<DiscreteParams> {
    if !(p.delta > 0.0) || !p.delta.is_finite() {
        return Err(Error::contract(format!("step must be positive and finite, got {}", p.delta)));
    }
    let n = p.a.dim();
    if p.b.len() != n || p.c.len() != n {
        return Err(Error::dim(format!(
            "state size {n} but B has {} and C has {} entries",
            p.b.len(),
            p.c.len()
        )));
    }
    let out = match &p.a {
        StateMatrix::Diagonal(diag) => {
            let mut a_bar = Vec::with_capacity(n);
            let mut b_bar = Vec::with_capacity(n);
            for (a, b) in diag.iter().zip(&p.b) {
                let x = p.delta * a;
                a_bar.push(x.exp());
                b_bar.push(if x.abs() < ZOH_LIMIT_THRESHOLD {
                    p.delta * b
                } else {
                    x.exp_m1() / x * p.delta * b
                });
            }
            DiscreteParams {
                a_bar: StateMatrix::Diagonal(a_bar),
                b_bar,
            }
        }
        StateMatrix::Dense { data, .. } => {
            // exp([[ΔA, ΔB], [0, 0]]) = [[Ā, B̄], [0, 1]]; valid for singular A too.
            let m = n + 1;
            let mut aug = vec![0.0; m * m];
            for i in 0..n {
                for j in 0..n {
                    aug[i * m + j] = p.delta * data[i * n + j];
                }
                aug[i * m + n] = p.delta * p.b[i];
            }
            let e = matrix_exp(&aug, m);
            let mut a_bar = vec![0.0; n * n];
            let mut b_bar = vec![0.0; n];
            for i in 0..n {
                a_bar[i * n..(i + 1) * n].copy_from_slice(&e[i * m..i * m + n]);
                b_bar[i] = e[i * m + n];
            }
            DiscreteParams {
                a_bar: StateMatrix::Dense { n, data: a_bar },
                b_bar,
            }
        }
    };
    let finite = out.a_bar.to_dense().iter().chain(&out.b_bar).all(|v| v.is_finite());
    if !finite {
        return Err(Error::non_finite("discretization overflowed"));
    }
    Ok(out)
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn matrix_exp(m: &[f64], n: usize) -> Vec<f64> {
    let norm = (0..n)
        .map(|i| m[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(squarings);
    let x: Vec<f64> = m.iter().map(|v| v * scale).collect();

    let mut result = vec![0.0; n * n];
    for i in 0..n {
        result[i * n + i] = 1.0;
    }
    let mut term = result.clone();
    for k in 1..=30 {
        term = crate::autodiff::matmul_raw(&term, &x, n, n, n);
        let inv = 1.0 / k as f64;
        term.iter_mut().for_each(|v| *v *= inv);
        let mut biggest: f64 = 0.0;
        for (r, t) in result.iter_mut().zip(&term) {
            *r += t;
            biggest = biggest.max(t.abs());
        }
        if biggest < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = crate::autodiff::matmul_raw(&result, &result, n, n, n);
    }
    result
}

fn check_output_map(d: &DiscreteParams, c: &[f64]) -> Result<usize> {
    let n = d.a_bar.dim();
    if d.b_bar.len() != n || c.len() != n {
        return Err(Error::dim(format!(
            "state size {n} but B̄ has {} and C has {} entries",
            d.b_bar.len(),
            c.len()
        )));
    }
    Ok(n)
}

/// Sequential recurrence `h_t = Ā h_{t−1} + B̄ x_t`, `y_t = C h_t`.
pub fn lti_scan(d: &DiscreteParams, c: &[f64], x: &[f64], h0: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = check_output_map(d, c)?;
    let mut h = match h0 {
        Some(h0) if h0.len() != n => {
            return Err(Error::dim(format!("initial state has {} entries, expected {n}", h0.len())))
        }
        Some(h0) => h0.to_vec(),
        None => vec![0.0; n],
    };
    let mut y = Vec::with_capacity(x.len());
    for &xt in x {
        h = d.a_bar.apply(&h);
        for (hi, bi) in h.iter_mut().zip(&d.b_bar) {
            *hi += bi * xt;
        }
        y.push(c.iter().zip(&h).map(|(a, b)| a * b).sum());
    }
    Ok(y)
}

/// Convolution kernel `K̄` of length `m`, by iterated state propagation.
pub fn lti_conv_kernel(d: &DiscreteParams, c: &[f64], m: usize) -> Result<Vec<f64>> {
    check_output_map(d, c)?;
    if m == 0 {
        return Err(Error::contract("kernel length must be at least 1"));
    }
    let mut s = d.b_bar.clone();
    let mut k = Vec::with_capacity(m);
    for i in 0..m {
        k.push(c.iter().zip(&s).map(|(a, b)| a * b).sum());
        if i + 1 < m {
            s = d.a_bar.apply(&s);
        }
    }
    Ok(k)
}

/// Causal convolution `y_t = Σ_{j ≤ t} k_j x_{t−j}`.
pub fn lti_conv_apply(k: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if k.len() != x.len() {
        return Err(Error::contract(format!(
            "kernel length {} does not match sequence length {}",
            k.len(),
            x.len()
        )));
    }
    Ok((0..x.len()).map(|t| (0..=t).map(|j| k[j] * x[t - j]).sum()).collect())
}
