//! Input-dependent (selective) state-space block.
//!
//! Per timestep `t`, channel `c` and state `n`:
//!
//! ```text
//! h[t,c,n] = exp(Δ[t,c]·A[c,n]) · h[t−1,c,n] + B̄[t,c,n] · v[t,c]
//! y[t,c]   = Σ_n C[t,n] · h[t,c,n] + D[c] · v[t,c]
//! ```
//!
//! with the exact zero-order-hold `B̄ = (exp(ΔA) − 1)/A · B` or the
//! simplified `B̄ = Δ·B`. The full block wraps the scan with an input
//! expansion into value and gate branches, a depthwise causal convolution,
//! SiLU gating, an output projection and a residual connection.

use rand::Rng;

use crate::autodiff::{ParamId, ParamSet, Tape, Var};
use crate::autodiff::CustomOp;
use crate::error::{Error, Result};
use crate::init::{fan_in_uniform, inverse_softplus, ModelRng};
use crate::tensor::Tensor;

use super::ZOH_LIMIT_THRESHOLD;

/// `(φ, ∂φ/∂Δ, ∂φ/∂A)` where `B̄ = φ·B`.
#[inline]
fn zoh_factor(delta: f64, a: f64, exact: bool) -> (f64, f64, f64) {
    if !exact {
        return (delta, 1.0, 0.0);
    }
    let x = delta * a;
    if x.abs() < ZOH_LIMIT_THRESHOLD {
        return (delta, 1.0, 0.5 * delta * delta);
    }
    let ex = x.exp();
    let phi = x.exp_m1() / a;
    let dphi_da = if x.abs() < 1e-3 {
        delta * delta * (0.5 + x * (1.0 / 3.0 + x * (1.0 / 8.0 + x * (1.0 / 30.0 + x / 144.0))))
    } else {
        (x * ex - x.exp_m1()) / (a * a)
    };
    (phi, ex, dphi_da)
}

/// Result of [`selective_scan_kernel`].
#[derive(Debug, Clone)]
pub struct ScanOutput {
    /// `[len, channels]`
    pub y: Vec<f64>,
    /// `[len, channels, state]`
    pub states: Vec<f64>,
}

/// Sequential selective scan over flat row-major buffers.
///
/// Shapes: `v, delta: [len, channels]`, `a: [channels, state]`,
/// `b, c: [len, state]`, `d: [channels]`.
#[allow(clippy::too_many_arguments)]
pub fn selective_scan_kernel(
    v: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    d: &[f64],
    len: usize,
    channels: usize,
    state: usize,
    zoh_exact: bool,
) -> Result<ScanOutput> {
    let ok = v.len() == len * channels
        && delta.len() == len * channels
        && a.len() == channels * state
        && b.len() == len * state
        && c.len() == len * state
        && d.len() == channels;
    if !ok {
        return Err(Error::dim(format!(
            "selective scan buffers do not match len={len}, channels={channels}, state={state}"
        )));
    }
    let mut y = vec![0.0; len * channels];
    let mut states = vec![0.0; len * channels * state];
    for t in 0..len {
        let (prev, cur) = states.split_at_mut(t * channels * state);
        let cur = &mut cur[..channels * state];
        let prev = if t > 0 { Some(&prev[(t - 1) * channels * state..]) } else { None };
        let bt = &b[t * state..(t + 1) * state];
        let ct = &c[t * state..(t + 1) * state];
        for ch in 0..channels {
            let vt = v[t * channels + ch];
            let dt = delta[t * channels + ch];
            let mut acc = d[ch] * vt;
            for n in 0..state {
                let an = a[ch * state + n];
                let (phi, _, _) = zoh_factor(dt, an, zoh_exact);
                let mut h = phi * bt[n] * vt;
                if let Some(p) = prev {
                    h += (dt * an).exp() * p[ch * state + n];
                }
                cur[ch * state + n] = h;
                acc += ct[n] * h;
            }
            if !acc.is_finite() {
                return Err(Error::non_finite(format!(
                    "selective scan diverged at timestep {t}, channel {ch}"
                )));
            }
            y[t * channels + ch] = acc;
        }
    }
    Ok(ScanOutput { y, states })
}

struct ScanOp {
    states: Vec<f64>,
    len: usize,
    channels: usize,
    state: usize,
    zoh_exact: bool,
}

impl CustomOp for ScanOp {
    fn name(&self) -> &str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (len, chs, ns) = (self.len, self.channels, self.state);
        let (v, delta, a, b, c, d) = (
            inputs[0].data(),
            inputs[1].data(),
            inputs[2].data(),
            inputs[3].data(),
            inputs[4].data(),
            inputs[5].data(),
        );
        let mut gv = vec![0.0; len * chs];
        let mut gdelta = vec![0.0; len * chs];
        let mut ga = vec![0.0; chs * ns];
        let mut gb = vec![0.0; len * ns];
        let mut gc = vec![0.0; len * ns];
        let mut gd = vec![0.0; chs];
        // ∂L/∂h[t+1] · Ā[t+1], carried backwards in time
        let mut carry = vec![0.0; chs * ns];
        let h = &self.states;
        for t in (0..len).rev() {
            for ch in 0..chs {
                let i = t * chs + ch;
                let (gy, vt, dt) = (g[i], v[i], delta[i]);
                gd[ch] += gy * vt;
                gv[i] += gy * d[ch];
                for n in 0..ns {
                    let an = a[ch * ns + n];
                    let x = dt * an;
                    let da = x.exp();
                    let hcur = h[(t * chs + ch) * ns + n];
                    let hprev = if t > 0 { h[((t - 1) * chs + ch) * ns + n] } else { 0.0 };
                    let bt = b[t * ns + n];
                    gc[t * ns + n] += gy * hcur;
                    let gh = gy * c[t * ns + n] + carry[ch * ns + n];

                    let g_da = gh * hprev;
                    gdelta[i] += g_da * da * an;
                    ga[ch * ns + n] += g_da * da * dt;

                    let (phi, dphi_ddelta, dphi_da) = zoh_factor(dt, an, self.zoh_exact);
                    gv[i] += gh * phi * bt;
                    gb[t * ns + n] += gh * vt * phi;
                    let g_phi = gh * vt * bt;
                    gdelta[i] += g_phi * dphi_ddelta;
                    ga[ch * ns + n] += g_phi * dphi_da;

                    carry[ch * ns + n] = gh * da;
                }
            }
        }
        vec![Some(gv), Some(gdelta), Some(ga), Some(gb), Some(gc), Some(gd)]
    }
}

/// Records a selective scan on the tape.
///
/// `v, delta: [L, C]`, `a: [C, N]`, `b, c: [L, N]`, `d: [C]`.
pub fn scan_on_tape(
    tape: &mut Tape,
    v: Var,
    delta: Var,
    a: Var,
    b: Var,
    c: Var,
    d: Var,
    zoh_exact: bool,
) -> Result<Var> {
    let (len, channels) = match tape.value(v).shape() {
        [l, ch] => (*l, *ch),
        s => return Err(Error::dim(format!("scan input must be [len, channels], got {s:?}"))),
    };
    let state = tape.value(a).last_dim();
    let out = selective_scan_kernel(
        tape.value(v).data(),
        tape.value(delta).data(),
        tape.value(a).data(),
        tape.value(b).data(),
        tape.value(c).data(),
        tape.value(d).data(),
        len,
        channels,
        state,
        zoh_exact,
    )?;
    let op = ScanOp {
        states: out.states,
        len,
        channels,
        state,
        zoh_exact,
    };
    tape.custom(
        &[v, delta, a, b, c, d],
        Tensor::new(vec![len, channels], out.y)?,
        Box::new(op),
    )
}

struct CausalConvOp {
    width: usize,
}

impl CustomOp for CausalConvOp {
    fn name(&self) -> &str {
        "causal_conv1d"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (len, chs) = (x.shape()[0], x.shape()[1]);
        let k = self.width;
        let mut gx = vec![0.0; len * chs];
        let mut gw = vec![0.0; chs * k];
        let mut gb = vec![0.0; chs];
        for t in 0..len {
            for ch in 0..chs {
                let gy = g[t * chs + ch];
                gb[ch] += gy;
                for j in 0..k {
                    let Some(src) = (t + j + 1).checked_sub(k) else { continue };
                    gx[src * chs + ch] += gy * w.data()[ch * k + j];
                    gw[ch * k + j] += gy * x.data()[src * chs + ch];
                }
            }
        }
        vec![Some(gx), Some(gw), Some(gb)]
    }
}

/// Depthwise causal convolution; tap `K−1` multiplies the current step.
///
/// `x: [L, C]`, `w: [C, K]`, `bias: [C]`.
pub fn causal_conv_on_tape(tape: &mut Tape, x: Var, w: Var, bias: Var) -> Result<Var> {
    let (len, chs) = match tape.value(x).shape() {
        [l, c] => (*l, *c),
        s => return Err(Error::dim(format!("conv input must be [len, channels], got {s:?}"))),
    };
    let k = tape.value(w).last_dim();
    if tape.value(w).shape() != [chs, k] || tape.value(bias).len() != chs {
        return Err(Error::dim("conv weights do not match channel count"));
    }
    let (xd, wd, bd) = (tape.value(x).data(), tape.value(w).data(), tape.value(bias).data());
    let mut y = vec![0.0; len * chs];
    for t in 0..len {
        for ch in 0..chs {
            let mut acc = bd[ch];
            for j in 0..k {
                if let Some(src) = (t + j + 1).checked_sub(k) {
                    acc += wd[ch * k + j] * xd[src * chs + ch];
                }
            }
            y[t * chs + ch] = acc;
        }
    }
    tape.custom(&[x, w, bias], Tensor::new(vec![len, chs], y)?, Box::new(CausalConvOp { width: k }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    pub d_model: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub conv_width: usize,
}

impl BlockDims {
    /// Expansion factor 2, convolution width 4.
    pub fn new(d_model: usize, d_state: usize) -> Self {
        Self {
            d_model,
            d_inner: 2 * d_model,
            d_state,
            conv_width: 4,
        }
    }
}

/// Parameter handles of one Mamba-style block.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveSsmBlock {
    pub dims: BlockDims,
    pub zoh_exact: bool,
    pub in_value: ParamId,
    pub in_gate: ParamId,
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
    pub dt_weight: ParamId,
    pub dt_bias: ParamId,
    pub b_weight: ParamId,
    pub b_bias: ParamId,
    pub c_weight: ParamId,
    pub c_bias: ParamId,
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub out: ParamId,
}

/// Intermediate values of one block application.
#[derive(Debug, Clone, Copy)]
pub struct BlockTrace {
    /// Post-convolution, post-SiLU value branch fed to the scan.
    pub value: Var,
    pub delta: Var,
    pub b: Var,
    pub c: Var,
    /// Negative-diagonal state matrix `−exp(a_log)`.
    pub a: Var,
    /// Raw scan output before gating.
    pub scan: Var,
    pub output: Var,
}

impl SelectiveSsmBlock {
    /// Registers and initializes the block's parameters under `prefix`.
    pub fn new(params: &mut ParamSet, prefix: &str, dims: BlockDims, zoh_exact: bool, rng: &mut ModelRng) -> Self {
        let BlockDims {
            d_model: d,
            d_inner: di,
            d_state: n,
            conv_width: k,
        } = dims;
        let mut add = |name: &str, t: Tensor| params.add(format!("{prefix}.{name}"), t);
        let in_value = add("in_value.weight", fan_in_uniform(rng, &[di, d], d));
        let in_gate = add("in_gate.weight", fan_in_uniform(rng, &[di, d], d));
        let conv_weight = add("conv.weight", fan_in_uniform(rng, &[di, k], k));
        let conv_bias = add("conv.bias", fan_in_uniform(rng, &[di], k));
        let dt_weight = add("dt.weight", fan_in_uniform(rng, &[di, di], di));
        // softplus(bias) log-uniform in [1e-3, 1e-1]
        let dt_bias_vals = (0..di)
            .map(|_| {
                let u: f64 = rng.gen_range(0.0..1.0);
                inverse_softplus((1e-3f64.ln() + u * (1e-1f64.ln() - 1e-3f64.ln())).exp())
            })
            .collect();
        let dt_bias = add("dt.bias", Tensor::vector(dt_bias_vals));
        let b_weight = add("b_proj.weight", fan_in_uniform(rng, &[n, di], di));
        let b_bias = add("b_proj.bias", fan_in_uniform(rng, &[n], di));
        let c_weight = add("c_proj.weight", fan_in_uniform(rng, &[n, di], di));
        let c_bias = add("c_proj.bias", fan_in_uniform(rng, &[n], di));
        let a_log_vals = (0..di).flat_map(|_| (1..=n).map(|j| (j as f64).ln())).collect();
        let a_log = add("a_log", Tensor::matrix(di, n, a_log_vals).expect("sized above"));
        let d_skip = add("d_skip", Tensor::filled(&[di], 1.0));
        let out = add("out.weight", fan_in_uniform(rng, &[d, di], di));
        Self {
            dims,
            zoh_exact,
            in_value,
            in_gate,
            conv_weight,
            conv_bias,
            dt_weight,
            dt_bias,
            b_weight,
            b_bias,
            c_weight,
            c_bias,
            a_log,
            d_skip,
            out,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 13] {
        [
            self.in_value,
            self.in_gate,
            self.conv_weight,
            self.conv_bias,
            self.dt_weight,
            self.dt_bias,
            self.b_weight,
            self.b_bias,
            self.c_weight,
            self.c_bias,
            self.a_log,
            self.d_skip,
            self.out,
        ]
    }

    /// Zeroes every projection and the skip term, reducing the block to the
    /// identity map `x ↦ x`.
    pub fn zero_projections(&self, params: &mut ParamSet) {
        for id in [
            self.in_value,
            self.in_gate,
            self.dt_weight,
            self.b_weight,
            self.b_bias,
            self.c_weight,
            self.c_bias,
            self.d_skip,
            self.out,
        ] {
            params.get_mut(id).data_mut().fill(0.0);
        }
    }

    /// Applies the block to `x: [L, d_model]`, returning `x + out`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        Ok(self.forward_trace(tape, params, x)?.output)
    }

    pub fn forward_trace(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<BlockTrace> {
        match tape.value(x).shape() {
            [l, d] if *l >= 1 && *d == self.dims.d_model => {}
            s => {
                return Err(Error::dim(format!(
                    "block expects [len >= 1, {}], got {s:?}",
                    self.dims.d_model
                )))
            }
        }
        let mut p = |id| tape.param(params, id);
        let (w_val, w_gate, conv_w, conv_b) = (p(self.in_value), p(self.in_gate), p(self.conv_weight), p(self.conv_bias));
        let (dt_w, dt_b, b_w, b_b) = (p(self.dt_weight), p(self.dt_bias), p(self.b_weight), p(self.b_bias));
        let (c_w, c_b, a_log, d_skip, w_out) = (p(self.c_weight), p(self.c_bias), p(self.a_log), p(self.d_skip), p(self.out));

        let value = tape.linear(x, w_val, None)?;
        let gate = tape.linear(x, w_gate, None)?;
        let conv = causal_conv_on_tape(tape, value, conv_w, conv_b)?;
        let value = tape.silu(conv)?;

        let dt_pre = tape.linear(value, dt_w, Some(dt_b))?;
        let delta = tape.softplus(dt_pre)?;
        let b = tape.linear(value, b_w, Some(b_b))?;
        let c = tape.linear(value, c_w, Some(c_b))?;
        let a_pos = tape.exp(a_log)?;
        let a = tape.neg(a_pos)?;

        let scan = scan_on_tape(tape, value, delta, a, b, c, d_skip, self.zoh_exact)?;
        let gate = tape.silu(gate)?;
        let gated = tape.mul(scan, gate)?;
        let out = tape.linear(gated, w_out, None)?;
        let output = tape.add(x, out)?;
        Ok(BlockTrace {
            value,
            delta,
            b,
            c,
            a,
            scan,
            output,
        })
    }

    /// Tape-free application to a `[L, d_model]` sequence.
    pub fn apply(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, params, xv)?;
        Ok(tape.value(y).clone())
    }
}
