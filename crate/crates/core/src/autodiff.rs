//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its output value. [`Tape::backward`] walks the nodes in reverse
//! insertion order (which is a topological order, since inputs always exist
//! before the operation that consumes them) and returns the adjoint of
//! every node as [`Gradients`].
//!
//! Trainable parameters live in a [`ParamSet`] outside the tape. They are
//! bound to the tape with [`Tape::param`]; [`Gradients::accumulate`] adds
//! their adjoints to the parameter gradient buffers.
//!
//! ```
//! use hgmn::autodiff::{ParamSet, Tape};
//! use hgmn::tensor::Tensor;
//!
//! let mut params = ParamSet::new();
//! let x = params.add("x", Tensor::vector(vec![3.0]));
//!
//! let mut tape = Tape::new();
//! let xv = tape.param(&params, x);
//! let sq = tape.mul(xv, xv).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap().accumulate(&mut params);
//! assert_eq!(params.get(x).grad.as_deref(), Some(&[6.0][..]));
//! ```

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearities with closed-form derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Exp,
    Tanh,
    Softplus,
    Silu,
    Sigmoid,
    LeakyRelu(f64),
    Neg,
}

/// Slope used for every leaky ReLU in the model.
pub const LEAKY_SLOPE: f64 = 0.01;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Exp => x.exp(),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
            Activation::Silu => silu(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::LeakyRelu(s) => leaky_relu(x, s),
            Activation::Neg => -x,
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Exp => y,
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => sigmoid(x),
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Neg => -1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Exp => "exp",
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Silu => "silu",
            Activation::Sigmoid => "sigmoid",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Neg => "neg",
        }
    }
}

/// An operation with a hand-written backward rule, recorded as one node.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;

    /// Returns one gradient buffer per input (None when the input receives
    /// no gradient).
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &[f64],
    ) -> Vec<Option<Vec<f64>>>;
}

type Offsets = Arc<[usize]>;
type Indices = Arc<[usize]>;

enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Unary(Var, Activation),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Indices),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    BlockSumCols(Var, usize),
    SegmentSoftmax(Var, Offsets),
    SegmentMean(Var, Offsets),
    SegmentWeightedSum(Var, Var, Offsets),
    PickPerRow(Var, Indices),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

fn check_finite(name: &str, t: &Tensor) -> Result<()> {
    match t.first_non_finite() {
        None => Ok(()),
        Some(i) => Err(Error::non_finite(format!(
            "{name} produced {} at flat index {i} (shape {:?})",
            t.data()[i],
            t.shape()
        ))),
    }
}

fn require_2d(name: &str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(format!("{name} expects a matrix, got shape {s:?}"))),
    }
}

fn check_offsets(name: &str, offsets: &[usize], rows: usize) -> Result<()> {
    let ok = offsets.first() == Some(&0)
        && offsets.last() == Some(&rows)
        && offsets.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "{name}: segment offsets must start at 0, end at {rows} and be strictly increasing"
        )))
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(src) {
                *a += b;
            }
        }
        None => *dst = Some(src.to_vec()),
    }
}

fn accumulate_with<F: FnMut(&mut [f64])>(dst: &mut Option<Vec<f64>>, len: usize, f: F) {
    let buf = dst.get_or_insert_with(|| vec![0.0; len]);
    let mut f = f;
    f(buf);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op) -> Result<Var> {
        check_finite(name, &value)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant (receives a gradient but is not a parameter).
    pub fn constant(&mut self, t: Tensor) -> Var {
        let value = Tensor::from_parts(t.shape().to_vec(), t.into_data());
        self.nodes.push(Node {
            value,
            op: Op::Leaf(None),
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a parameter to the tape.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let p = params.get(id);
        let value = Tensor::from_parts(p.shape().to_vec(), p.data().to_vec());
        self.nodes.push(Node {
            value,
            op: Op::Leaf(Some(id)),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_2d("matmul", ta)?;
        let (k2, n) = require_2d("matmul", tb)?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = require_2d("transpose", t)?;
        let out = transpose_raw(t.data(), r, c);
        self.push("transpose", Tensor::from_parts(vec![c, r], out), Op::Transpose(a))
    }

    /// `x · wᵀ` for a weight stored as `[out, in]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let wt = self.transpose(weight)?;
        let y = self.matmul(x, wt)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
            return Ok((Tensor::from_parts(ta.shape().to_vec(), data), false));
        }
        let d = ta.last_dim();
        if tb.ndim() == 1 && tb.len() == d && ta.ndim() >= 1 {
            let data = ta
                .data()
                .chunks(d.max(1))
                .flat_map(|row| row.iter().zip(tb.data()).map(|(x, y)| f(*x, *y)))
                .collect();
            return Ok((Tensor::from_parts(ta.shape().to_vec(), data), true));
        }
        Err(Error::dim(format!(
            "{name}: shapes {:?} and {:?} are not broadcastable",
            ta.shape(),
            tb.shape()
        )))
    }

    /// Elementwise sum; `b` may also be a vector matching the last dimension of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, row) = self.binary("add", a, b, |x, y| x + y)?;
        let op = if row { Op::AddRow(a, b) } else { Op::Add(a, b) };
        self.push("add", t, op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, row) = self.binary("sub", a, b, |x, y| x - y)?;
        if row {
            return Err(Error::dim("sub does not broadcast"));
        }
        self.push("sub", t, Op::Sub(a, b))
    }

    /// Elementwise product; `b` may also be a vector matching the last dimension of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, row) = self.binary("mul", a, b, |x, y| x * y)?;
        let op = if row { Op::MulRow(a, b) } else { Op::Mul(a, b) };
        self.push("mul", t, op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * c).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("scale", out, Op::Scale(a, c))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| act.apply(*x)).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(act.name(), out, Op::Unary(a, act))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Exp)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Softplus)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Silu)
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::LeakyRelu(LEAKY_SLOPE))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Neg)
    }

    fn lastdim_rows(&self, name: &str, a: Var) -> Result<(usize, usize)> {
        let t = self.value(a);
        let d = t.last_dim();
        if t.ndim() == 0 || d == 0 {
            return Err(Error::dim(format!("{name}: last dimension is empty")));
        }
        Ok((t.len() / d, d))
    }

    /// Softmax over the last dimension, computed after max-subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (_, d) = self.lastdim_rows("softmax", a)?;
        let t = self.value(a);
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(d) {
            out.extend(softmax_slice(row));
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        self.push("softmax", out, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (_, d) = self.lastdim_rows("log_softmax", a)?;
        let t = self.value(a);
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|x| x - lse));
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        self.push("log_softmax", out, Op::LogSoftmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.nodes.push(Node {
            value: Tensor::scalar(s),
            op: Op::Sum(a),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(a))
    }

    /// Selects rows of a matrix (rows may repeat).
    pub fn gather_rows(&mut self, a: Var, idx: Indices) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = require_2d("gather_rows", t)?;
        if let Some(bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::contract(format!("gather_rows: row {bad} out of range {r}")));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            out.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let out = Tensor::from_parts(vec![idx.len(), c], out);
        self.push("gather_rows", out, Op::GatherRows(a, idx))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let (_, c) = require_2d("concat_rows", self.value(*first))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c2) = require_2d("concat_rows", t)?;
            if c2 != c {
                return Err(Error::dim(format!("concat_rows: {c2} columns vs {c}")));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        let out = Tensor::from_parts(vec![rows, c], out);
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = require_2d("slice_cols", t)?;
        if start + len > c {
            return Err(Error::dim(format!("slice_cols {start}..{} of {c} columns", start + len)));
        }
        let mut out = Vec::with_capacity(r * len);
        for row in t.data().chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::from_parts(vec![r, len], out);
        self.push("slice_cols", out, Op::SliceCols(a, start))
    }

    /// Sums contiguous column blocks: `[m, blocks*w] -> [m, blocks]`.
    pub fn block_sum_cols(&mut self, a: Var, blocks: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = require_2d("block_sum_cols", t)?;
        if blocks == 0 || c % blocks != 0 {
            return Err(Error::dim(format!("block_sum_cols: {c} columns into {blocks} blocks")));
        }
        let w = c / blocks;
        let mut out = Vec::with_capacity(r * blocks);
        for row in t.data().chunks(c) {
            out.extend(row.chunks(w).map(|b| b.iter().sum::<f64>()));
        }
        let out = Tensor::from_parts(vec![r, blocks], out);
        self.push("block_sum_cols", out, Op::BlockSumCols(a, blocks))
    }

    /// Softmax down the rows of each segment, independently per column.
    pub fn segment_softmax(&mut self, a: Var, offsets: Offsets) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = require_2d("segment_softmax", t)?;
        check_offsets("segment_softmax", &offsets, r)?;
        let src = t.data();
        let mut out = vec![0.0; r * c];
        for seg in offsets.windows(2) {
            let (lo, hi) = (seg[0], seg[1]);
            for j in 0..c {
                let max = (lo..hi).map(|i| src[i * c + j]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in lo..hi {
                    let e = (src[i * c + j] - max).exp();
                    out[i * c + j] = e;
                    z += e;
                }
                for i in lo..hi {
                    out[i * c + j] /= z;
                }
            }
        }
        let out = Tensor::from_parts(vec![r, c], out);
        self.push("segment_softmax", out, Op::SegmentSoftmax(a, offsets))
    }

    /// Mean of the rows of each segment: `[m, d] -> [segments, d]`.
    pub fn segment_mean(&mut self, a: Var, offsets: Offsets) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = require_2d("segment_mean", t)?;
        check_offsets("segment_mean", &offsets, r)?;
        let k = offsets.len() - 1;
        let mut out = vec![0.0; k * c];
        for (s, seg) in offsets.windows(2).enumerate() {
            let dst = &mut out[s * c..(s + 1) * c];
            for i in seg[0]..seg[1] {
                for (o, v) in dst.iter_mut().zip(&t.data()[i * c..(i + 1) * c]) {
                    *o += v;
                }
            }
            let inv = 1.0 / (seg[1] - seg[0]) as f64;
            dst.iter_mut().for_each(|o| *o *= inv);
        }
        let out = Tensor::from_parts(vec![k, c], out);
        self.push("segment_mean", out, Op::SegmentMean(a, offsets))
    }

    /// `out[s] = Σ_{i in segment s} w[i] · v[i]` with `w: [m, 1]`, `v: [m, d]`.
    pub fn segment_weighted_sum(&mut self, w: Var, v: Var, offsets: Offsets) -> Result<Var> {
        let (tw, tv) = (self.value(w), self.value(v));
        let (rw, cw) = require_2d("segment_weighted_sum", tw)?;
        let (r, c) = require_2d("segment_weighted_sum", tv)?;
        if cw != 1 || rw != r {
            return Err(Error::dim(format!(
                "segment_weighted_sum: weights {:?} against values {:?}",
                tw.shape(),
                tv.shape()
            )));
        }
        check_offsets("segment_weighted_sum", &offsets, r)?;
        let k = offsets.len() - 1;
        let mut out = vec![0.0; k * c];
        for (s, seg) in offsets.windows(2).enumerate() {
            let dst = &mut out[s * c..(s + 1) * c];
            for i in seg[0]..seg[1] {
                let wi = tw.data()[i];
                for (o, x) in dst.iter_mut().zip(&tv.data()[i * c..(i + 1) * c]) {
                    *o += wi * x;
                }
            }
        }
        let out = Tensor::from_parts(vec![k, c], out);
        self.push("segment_weighted_sum", out, Op::SegmentWeightedSum(w, v, offsets))
    }

    /// `out[i] = a[i, idx[i]]`.
    pub fn pick_per_row(&mut self, a: Var, idx: Indices) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = require_2d("pick_per_row", t)?;
        if idx.len() != r || idx.iter().any(|&j| j >= c) {
            return Err(Error::contract("pick_per_row: index list does not fit the matrix"));
        }
        let out = idx.iter().enumerate().map(|(i, &j)| t.data()[i * c + j]).collect();
        self.push("pick_per_row", Tensor::from_parts(vec![r], out), Op::PickPerRow(a, idx))
    }

    /// Records an operation whose value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        let name = op.name().to_string();
        self.push(&name, output, Op::Custom(inputs.to_vec(), op))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::contract(format!(
                "backward root must be a scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let (lo, hi) = adj.split_at_mut(i);
            let Some(g) = hi[0].as_deref() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, g, lo);
        }
        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf(Some(p)) => Some((i, p)),
                _ => None,
            })
            .collect();
        Ok(Gradients { adj, leaves })
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                // dA = dY · Bᵀ
                accumulate_with(&mut adj[a.0], m * k, |da| {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            da[i * k + p] += gi.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                // dB = Aᵀ · dY
                accumulate_with(&mut adj[b.0], k * n, |db| {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ta.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, x) in db[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                *d += aip * x;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (c, r) = (node.value.shape()[0], node.value.shape()[1]);
                let gt = transpose_raw(g, c, r);
                add_into(&mut adj[a.0], &gt);
            }
            Op::Add(a, b) => {
                add_into(&mut adj[a.0], g);
                add_into(&mut adj[b.0], g);
            }
            Op::Sub(a, b) => {
                add_into(&mut adj[a.0], g);
                accumulate_with(&mut adj[b.0], g.len(), |d| {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x -= y)
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                accumulate_with(&mut adj[a.0], g.len(), |d| {
                    for ((x, gy), bv) in d.iter_mut().zip(g).zip(tb.data()) {
                        *x += gy * bv;
                    }
                });
                accumulate_with(&mut adj[b.0], g.len(), |d| {
                    for ((x, gy), av) in d.iter_mut().zip(g).zip(ta.data()) {
                        *x += gy * av;
                    }
                });
            }
            Op::AddRow(a, b) => {
                add_into(&mut adj[a.0], g);
                let d = val(*b).len();
                accumulate_with(&mut adj[b.0], d, |db| {
                    for row in g.chunks(d) {
                        db.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::MulRow(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let d = tb.len();
                accumulate_with(&mut adj[a.0], g.len(), |da| {
                    for (drow, grow) in da.chunks_mut(d).zip(g.chunks(d)) {
                        for ((x, gy), bv) in drow.iter_mut().zip(grow).zip(tb.data()) {
                            *x += gy * bv;
                        }
                    }
                });
                accumulate_with(&mut adj[b.0], d, |db| {
                    for (grow, arow) in g.chunks(d).zip(ta.data().chunks(d)) {
                        for ((x, gy), av) in db.iter_mut().zip(grow).zip(arow) {
                            *x += gy * av;
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                accumulate_with(&mut adj[a.0], g.len(), |d| {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)
                });
            }
            Op::Unary(a, act) => {
                let x = val(*a).data();
                let y = node.value.data();
                accumulate_with(&mut adj[a.0], g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] += g[i] * act.derivative(x[i], y[i]);
                    }
                });
            }
            Op::Softmax(a) => {
                let dim = node.value.last_dim();
                let y = node.value.data();
                accumulate_with(&mut adj[a.0], g.len(), |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(dim).zip(g.chunks(dim)).zip(y.chunks(dim)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..dim {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let dim = node.value.last_dim();
                let y = node.value.data();
                accumulate_with(&mut adj[a.0], g.len(), |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(dim).zip(g.chunks(dim)).zip(y.chunks(dim)) {
                        let gsum: f64 = grow.iter().sum();
                        for j in 0..dim {
                            drow[j] += grow[j] - yrow[j].exp() * gsum;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                accumulate_with(&mut adj[a.0], n, |d| d.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                let s = g[0] / n as f64;
                accumulate_with(&mut adj[a.0], n, |d| d.iter_mut().for_each(|x| *x += s));
            }
            Op::GatherRows(a, idx) => {
                let ta = val(*a);
                let c = ta.last_dim();
                accumulate_with(&mut adj[a.0], ta.len(), |d| {
                    for (k, &i) in idx.iter().enumerate() {
                        for (x, y) in d[i * c..(i + 1) * c].iter_mut().zip(&g[k * c..(k + 1) * c]) {
                            *x += y;
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for p in parts {
                    let n = val(*p).len();
                    add_into(&mut adj[p.0], &g[at..at + n]);
                    at += n;
                }
            }
            Op::SliceCols(a, start) => {
                let ta = val(*a);
                let c = ta.last_dim();
                let w = node.value.last_dim();
                accumulate_with(&mut adj[a.0], ta.len(), |d| {
                    for (drow, grow) in d.chunks_mut(c).zip(g.chunks(w)) {
                        for (x, y) in drow[*start..start + w].iter_mut().zip(grow) {
                            *x += y;
                        }
                    }
                });
            }
            Op::BlockSumCols(a, blocks) => {
                let ta = val(*a);
                let c = ta.last_dim();
                let w = c / blocks;
                accumulate_with(&mut adj[a.0], ta.len(), |d| {
                    for (drow, grow) in d.chunks_mut(c).zip(g.chunks(*blocks)) {
                        for (j, x) in drow.iter_mut().enumerate() {
                            *x += grow[j / w];
                        }
                    }
                });
            }
            Op::SegmentSoftmax(a, offsets) => {
                let c = node.value.last_dim();
                let y = node.value.data();
                accumulate_with(&mut adj[a.0], g.len(), |d| {
                    for seg in offsets.windows(2) {
                        for j in 0..c {
                            let dot: f64 = (seg[0]..seg[1]).map(|i| g[i * c + j] * y[i * c + j]).sum();
                            for i in seg[0]..seg[1] {
                                d[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
                            }
                        }
                    }
                });
            }
            Op::SegmentMean(a, offsets) => {
                let ta = val(*a);
                let c = ta.last_dim();
                accumulate_with(&mut adj[a.0], ta.len(), |d| {
                    for (s, seg) in offsets.windows(2).enumerate() {
                        let inv = 1.0 / (seg[1] - seg[0]) as f64;
                        let gs = &g[s * c..(s + 1) * c];
                        for i in seg[0]..seg[1] {
                            for (x, y) in d[i * c..(i + 1) * c].iter_mut().zip(gs) {
                                *x += y * inv;
                            }
                        }
                    }
                });
            }
            Op::SegmentWeightedSum(w, v, offsets) => {
                let (tw, tv) = (val(*w), val(*v));
                let c = tv.last_dim();
                accumulate_with(&mut adj[w.0], tw.len(), |dw| {
                    for (s, seg) in offsets.windows(2).enumerate() {
                        let gs = &g[s * c..(s + 1) * c];
                        for i in seg[0]..seg[1] {
                            dw[i] += gs.iter().zip(&tv.data()[i * c..(i + 1) * c]).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                accumulate_with(&mut adj[v.0], tv.len(), |dv| {
                    for (s, seg) in offsets.windows(2).enumerate() {
                        let gs = &g[s * c..(s + 1) * c];
                        for i in seg[0]..seg[1] {
                            let wi = tw.data()[i];
                            for (x, y) in dv[i * c..(i + 1) * c].iter_mut().zip(gs) {
                                *x += wi * y;
                            }
                        }
                    }
                });
            }
            Op::PickPerRow(a, idx) => {
                let ta = val(*a);
                let c = ta.last_dim();
                accumulate_with(&mut adj[a.0], ta.len(), |d| {
                    for (i, &j) in idx.iter().enumerate() {
                        d[i * c + j] += g[i];
                    }
                });
            }
            Op::Custom(inputs, op) => {
                let tensors: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let grads = op.backward(&tensors, &node.value, g);
                for (v, gi) in inputs.iter().zip(grads) {
                    if let Some(gi) = gi {
                        add_into(&mut adj[v.0], &gi);
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax of one slice.
pub fn softmax_slice(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Vec<f64>>>,
    leaves: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; `None` when `v` does not
    /// influence the root.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.adj.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter adjoints into `params`' gradient buffers. Parameters
    /// not reached by the sweep still get a (zero) buffer.
    pub fn accumulate(&self, params: &mut ParamSet) {
        for id in params.ids().collect::<Vec<_>>() {
            let t = params.get_mut(id);
            if t.grad.is_none() {
                t.zero_grad();
            }
        }
        for &(node, id) in &self.leaves {
            if let Some(g) = self.adj.get(node).and_then(|g| g.as_deref()) {
                let buf = params.get_mut(id).grad.as_mut().expect("allocated above");
                buf.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let m = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let y = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_row_matmul() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let b = tape.constant(Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap());
        let y = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] x [2, 3]"), "{err}");
    }

    #[test]
    fn leaky_relu_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 2.0]));
        let y = tape.leaky_relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.01, 2.0]);
    }

    #[test]
    fn tanh_of_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0]));
        let y = tape.tanh(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0]);
    }

    #[test]
    fn softplus_gradient_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0]));
        let y = tape.softplus(x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        let analytic = g.get(x).unwrap()[0];
        let h = 1e-5;
        let fd = (softplus(h) - softplus(-h)) / (2.0 * h);
        assert!(close(analytic, fd, 1e-9));
        assert!(close(analytic, 0.5, 1e-12));
    }

    #[test]
    fn exp_overflow_is_reported() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1000.0]));
        assert!(matches!(tape.exp(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn incompatible_broadcast_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(tape.add(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

        let x = tape.constant(Tensor::vector(vec![7.25; 3]));
        let y = tape.softmax(x).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let x = tape.constant(Tensor::vector(vec![0.0, 2f64.ln()]));
        let y = tape.softmax(x).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-15 && (d[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_of_empty_last_dim_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 0]));
        assert!(matches!(tape.softmax(x), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut params = ParamSet::new();
        let x = params.add("x", Tensor::vector(vec![1.0, -2.0, 4.0]));
        let mut tape = Tape::new();
        let xv = tape.param(&params, x);
        let s = tape.sum(xv);
        tape.backward(s).unwrap().accumulate(&mut params);
        assert_eq!(params.get(x).grad.as_deref().unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut params = ParamSet::new();
        let x = params.add("x", Tensor::vector(vec![3.0]));
        let mut tape = Tape::new();
        let xv = tape.param(&params, x);
        let sq = tape.mul(xv, xv).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        g.accumulate(&mut params);
        g.accumulate(&mut params);
        assert_eq!(params.get(x).grad.as_deref().unwrap(), &[12.0]);
    }

    #[test]
    fn disconnected_parameter_gets_zero_grad() {
        let mut params = ParamSet::new();
        let x = params.add("x", Tensor::vector(vec![1.0]));
        let y = params.add("y", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let xv = tape.param(&params, x);
        let _yv = tape.param(&params, y);
        let s = tape.sum(xv);
        tape.backward(s).unwrap().accumulate(&mut params);
        assert_eq!(params.get(y).grad.as_deref().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn segment_ops_reduce_within_segments() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![4.0, 4.0]]).unwrap());
        let offsets: Offsets = vec![0, 2, 3].into();
        let m = tape.segment_mean(x, offsets.clone()).unwrap();
        assert_eq!(tape.value(m).data(), &[0.5, 0.5, 4.0, 4.0]);
        let s = tape.segment_softmax(x, offsets).unwrap();
        assert_eq!(tape.value(s).data()[4..], [1.0, 1.0]);
    }
}
