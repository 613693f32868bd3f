//! The assembled network: align tokens once, then per layer run one
//! selective block per node type over the inner orders and one shared block
//! over the global order, and finish with a linear head.

use std::sync::Arc;

use rand::SeedableRng;

use crate::alignment::{AlignDims, Aligner, AlignmentParams};
use crate::autodiff::{ParamId, ParamSet, Tape, Var};
use crate::config::{InnerOrderMode, ModelConfig, OuterOrderMode};
use crate::error::{Error, Result};
use crate::hetgraph::{build_tokens, count_all, count_instances_with, HeteroGraph, NodeId, Token, TokenOptions};
use crate::init::{fan_in_uniform, ModelRng};
use crate::ordering::{inner_order_with_counts, outer_order, GlobalOrder, InnerMode, OrderedGroups, OuterMode};
use crate::ssm::{BlockDims, SelectiveSsmBlock};
use crate::tensor::Tensor;

/// Seed offsets so parameter init and the two shuffles draw independent streams.
const INNER_SHUFFLE_STREAM: u64 = 0x1;
const OUTER_SHUFFLE_STREAM: u64 = 0x2;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Indexed by node type id.
    pub inner: Vec<SelectiveSsmBlock>,
    pub outer: SelectiveSsmBlock,
}

#[derive(Debug, Clone)]
pub struct HgmnModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub align: AlignmentParams,
    pub layers: Vec<Layer>,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
    pub num_classes: usize,
    node_type_names: Vec<String>,
    metapath_names: Vec<String>,
    /// Generator state right after initialization.
    pub rng: ModelRng,
}

/// Parameter-free precomputation: tokens, alignment plan and orders.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tokens: Vec<Token>,
    pub counts: Vec<u64>,
    pub aligner: Aligner,
    pub inner: OrderedGroups,
    pub outer: GlobalOrder,
    inner_index: Vec<Arc<[usize]>>,
    inner_inverse: Arc<[usize]>,
    outer_index: Arc<[usize]>,
    outer_inverse: Arc<[usize]>,
}

impl Prepared {
    pub fn new(g: &HeteroGraph, config: &ModelConfig) -> Result<Self> {
        let opts = TokenOptions {
            max_instances_per_node: config.max_instances_per_node,
            simple_paths_only: config.simple_paths_only,
        };
        let tokens = build_tokens(g, g.metapaths(), &opts);
        let counts = if config.simple_paths_only {
            (0..g.node_count())
                .map(|v| count_instances_with(g, g.metapaths(), v, true))
                .collect()
        } else {
            count_all(g, g.metapaths())
        };
        let inner_mode = match config.inner_order_mode {
            InnerOrderMode::Count => InnerMode::Count,
            InnerOrderMode::Random => InnerMode::Random(config.seed.wrapping_add(INNER_SHUFFLE_STREAM)),
        };
        let outer_mode = match config.outer_order_mode {
            OuterOrderMode::Degree => OuterMode::Degree,
            OuterOrderMode::Random => OuterMode::Random(config.seed.wrapping_add(OUTER_SHUFFLE_STREAM)),
        };
        let inner = inner_order_with_counts(g, &counts, inner_mode);
        let outer = outer_order(g, outer_mode);
        let aligner = Aligner::new(g, &tokens)?;
        Ok(Self {
            inner_index: inner.groups.iter().map(|s| s.indices()).collect(),
            inner_inverse: inner.inverse.clone().into(),
            outer_index: outer.sequence.indices(),
            outer_inverse: outer.inverse.clone().into(),
            tokens,
            counts,
            aligner,
            inner,
            outer,
        })
    }

    pub fn node_count(&self) -> usize {
        self.aligner.node_count()
    }

    pub fn truncated_tokens(&self) -> usize {
        self.tokens.iter().filter(|t| t.truncated).count()
    }
}

impl HgmnModel {
    pub fn new(g: &HeteroGraph, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let num_classes = g.num_classes();
        if num_classes == 0 {
            return Err(Error::contract("graph has no labeled nodes"));
        }
        let mut rng = ModelRng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let align = AlignmentParams::new(
            &mut params,
            g,
            AlignDims {
                hidden: config.hidden_dim,
                heads: config.num_heads,
                attention_dim: config.metapath_attention_dim,
                encoder: config.instance_encoder,
            },
            &mut rng,
        )?;
        let dims = BlockDims {
            d_model: config.hidden_dim,
            d_inner: config.expand * config.hidden_dim,
            d_state: config.state_dim,
            conv_width: config.conv_width,
        };
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let inner = g
                .node_types()
                .iter()
                .map(|nt| SelectiveSsmBlock::new(&mut params, &format!("layer{l}.inner.{}", nt.name), dims, config.zoh_exact, &mut rng))
                .collect();
            let outer = SelectiveSsmBlock::new(&mut params, &format!("layer{l}.outer"), dims, config.zoh_exact, &mut rng);
            layers.push(Layer { inner, outer });
        }
        let d = config.hidden_dim;
        let head_weight = params.add("head.weight", fan_in_uniform(&mut rng, &[num_classes, d], d));
        let head_bias = params.add("head.bias", fan_in_uniform(&mut rng, &[num_classes], d));
        Ok(Self {
            config: config.clone(),
            params,
            align,
            layers,
            head_weight,
            head_bias,
            num_classes,
            node_type_names: g.node_types().iter().map(|t| t.name.clone()).collect(),
            metapath_names: g.metapaths().iter().map(|m| m.name.clone()).collect(),
            rng,
        })
    }

    /// Checks that `g` has the node types and metapaths this model was built for.
    pub fn check_graph(&self, g: &HeteroGraph) -> Result<()> {
        let types: Vec<&str> = g.node_types().iter().map(|t| t.name.as_str()).collect();
        let paths: Vec<&str> = g.metapaths().iter().map(|m| m.name.as_str()).collect();
        if types != self.node_type_names || paths != self.metapath_names {
            return Err(Error::contract(format!(
                "model was built for node types {:?} and metapaths {:?}, graph has {types:?} and {paths:?}",
                self.node_type_names, self.metapath_names
            )));
        }
        if g.num_classes() > self.num_classes {
            return Err(Error::contract(format!(
                "graph has {} classes, model head has {}",
                g.num_classes(),
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn blocks(&self) -> impl Iterator<Item = &SelectiveSsmBlock> {
        self.layers.iter().flat_map(|l| l.inner.iter().chain(std::iter::once(&l.outer)))
    }

    /// Reduces every selective block to the identity map.
    pub fn zero_ssm_blocks(&mut self) {
        let blocks: Vec<_> = self.blocks().cloned().collect();
        for b in blocks {
            b.zero_projections(&mut self.params);
        }
    }

    /// Redraws every weight from `U(−gain/√fan_in, gain/√fan_in)` (vectors
    /// from `U(−gain/2, gain/2)`). State matrices and step-size weights keep
    /// their structured init; step-size biases move to `U(−0.5, 0.5)`.
    ///
    /// At the default init most scan-internal derivatives are orders of
    /// magnitude below the resolution of finite differences; a generic point
    /// with larger weights makes every coordinate observable.
    pub fn randomize_weights(&mut self, seed: u64, gain: f64) {
        let keep: Vec<ParamId> = self.blocks().flat_map(|b| [b.a_log, b.dt_weight]).collect();
        let dt_bias: Vec<ParamId> = self.blocks().map(|b| b.dt_bias).collect();
        let mut rng = ModelRng::seed_from_u64(seed);
        for id in self.params.ids().collect::<Vec<_>>() {
            if keep.contains(&id) {
                continue;
            }
            if dt_bias.contains(&id) {
                // steps of order one, so the decay terms carry visible gradient
                let t = self.params.get_mut(id);
                let n = t.len();
                *t = crate::init::uniform(&mut rng, &[n], -0.5, 0.5).with_grad();
                continue;
            }
            let t = self.params.get_mut(id);
            let shape = t.shape().to_vec();
            let bound = if shape.len() >= 2 { gain / (t.last_dim() as f64).sqrt() } else { gain / 2.0 };
            *t = crate::init::uniform(&mut rng, &shape, -bound, bound).with_grad();
        }
    }

    /// Aligned representation after every layer, then the head: `[n, classes]`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, prep: &Prepared) -> Result<Var> {
        let hidden = self.hidden(tape, params, prep)?;
        let w = tape.param(params, self.head_weight);
        let b = tape.param(params, self.head_bias);
        tape.linear(hidden, w, Some(b))
    }

    /// Node representations before the head.
    pub fn hidden(&self, tape: &mut Tape, params: &ParamSet, prep: &Prepared) -> Result<Var> {
        let mut h = prep.aligner.forward(tape, params, &self.align)?;
        for layer in &self.layers {
            let mut parts = Vec::new();
            for (ty, idx) in prep.inner_index.iter().enumerate() {
                if idx.is_empty() {
                    continue;
                }
                let seq = tape.gather_rows(h, idx.clone())?;
                parts.push(layer.inner[ty].forward(tape, params, seq)?);
            }
            let stacked = tape.concat_rows(&parts)?;
            h = tape.gather_rows(stacked, prep.inner_inverse.clone())?;

            let seq = tape.gather_rows(h, prep.outer_index.clone())?;
            let seq = layer.outer.forward(tape, params, seq)?;
            h = tape.gather_rows(seq, prep.outer_inverse.clone())?;
        }
        Ok(h)
    }

    /// Logits with the model's own parameters.
    pub fn logits(&self, prep: &Prepared) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &self.params, prep)?;
        Ok(tape.value(out).clone())
    }
}

/// Mean cross-entropy of `logits` rows listed in `mask` against `labels`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, mask: &[NodeId], labels: &[usize]) -> Result<Var> {
    if mask.is_empty() {
        return Err(Error::contract("loss over an empty node set"));
    }
    if mask.len() != labels.len() {
        return Err(Error::contract("one label per masked node is required"));
    }
    let rows = tape.gather_rows(logits, mask.to_vec().into())?;
    let logp = tape.log_softmax(rows)?;
    let picked = tape.pick_per_row(logp, labels.to_vec().into())?;
    let mean = tape.mean(picked)?;
    tape.neg(mean)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

/// Row-wise argmax, first index on ties.
pub fn predictions(logits: &Tensor) -> Vec<usize> {
    let c = logits.last_dim();
    logits
        .data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Accuracy, micro-F1 and macro-F1 for single-label predictions.
///
/// Macro-F1 averages over the classes that occur in `truth` or `pred`.
pub fn classification_scores(pred: &[usize], truth: &[usize], num_classes: usize) -> (f64, f64, f64) {
    let n = truth.len().max(1) as f64;
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fne = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fne[t] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let accuracy = correct as f64 / n;
    let (stp, sfp, sfn) = (correct as f64, fp.iter().sum::<usize>() as f64, fne.iter().sum::<usize>() as f64);
    let micro = if stp == 0.0 { 0.0 } else { 2.0 * stp / (2.0 * stp + sfp + sfn) };
    let mut f1s = Vec::new();
    for c in 0..num_classes {
        if tp[c] + fp[c] + fne[c] == 0 {
            continue;
        }
        f1s.push(2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fne[c]) as f64);
    }
    let macro_f1 = if f1s.is_empty() { 0.0 } else { f1s.iter().sum::<f64>() / f1s.len() as f64 };
    (accuracy, micro, macro_f1)
}

/// Loss and scores over the labeled nodes of `mask`.
pub fn loss_and_metrics(logits: &Tensor, labels: &[Option<usize>], mask: &[NodeId]) -> Result<Metrics> {
    if mask.is_empty() {
        return Err(Error::contract("metrics over an empty node set"));
    }
    let truth = mask
        .iter()
        .map(|&v| labels.get(v).copied().flatten().ok_or_else(|| Error::contract(format!("node {v} has no label"))))
        .collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = cross_entropy(&mut tape, l, mask, &truth)?;
    let loss = tape.value(loss).item()?;
    let all = predictions(logits);
    let pred: Vec<usize> = mask.iter().map(|&v| all[v]).collect();
    let (accuracy, micro_f1, macro_f1) = classification_scores(&pred, &truth, logits.last_dim());
    Ok(Metrics {
        loss,
        accuracy,
        micro_f1,
        macro_f1,
    })
}
