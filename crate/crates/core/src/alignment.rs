//! Heterogeneity alignment: every node's token becomes one `d′` vector.
//!
//! 1. Each node type has its own affine map into the shared width `d′`.
//! 2. A metapath instance is encoded as the mean of its projected node
//!    vectors (intermediates included), optionally followed by a shared
//!    linear map.
//! 3. Per metapath, multi-head attention scores every instance against the
//!    target, `e = leaky_relu(a_src·h_s + a_dst·h_inst)` per head on the
//!    head's slice of coordinates, softmax over the instances of one target.
//!    Head weights are averaged and the weighted sum goes through a leaky
//!    ReLU.
//! 4. Semantic attention mixes the per-metapath vectors of a node:
//!    `score = q·tanh(W·h + b)`, softmax over the metapaths that produced an
//!    instance for that node.
//!
//! Nodes without any instance keep their projected feature.
//!
//! [`Aligner`] records the whole batch on a tape; the free functions
//! ([`project_node`], [`encode_instance`], [`aggregate_instances`],
//! [`aggregate_metapaths`], [`align_token`]) evaluate one node directly and
//! serve as the reference for the batched path.

use std::cmp::Ordering;
use std::sync::Arc;

use crate::autodiff::{leaky_relu, softmax_slice, ParamId, ParamSet, Tape, Var, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, MetapathSchema, NodeId, Token};
use crate::init::{fan_in_uniform, ModelRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InstanceEncoder {
    #[default]
    Mean,
    Linear,
}

impl std::str::FromStr for InstanceEncoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "linear" => Ok(Self::Linear),
            _ => Err(Error::Config(format!("instance_encoder must be `mean` or `linear`, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for InstanceEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignDims {
    pub hidden: usize,
    pub heads: usize,
    pub attention_dim: usize,
    pub encoder: InstanceEncoder,
}

/// Per node type `W_A: [d′, d_A]`, `b_A: [d′]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeProjector {
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

/// Per metapath the two halves of `a_M`, each `[d′]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAttention {
    pub src: Vec<ParamId>,
    pub dst: Vec<ParamId>,
}

/// `W: [d_att, d′]`, `b: [d_att]`, `q: [1, d_att]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticAttention {
    pub weight: ParamId,
    pub bias: ParamId,
    pub query: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentParams {
    pub dims: AlignDims,
    pub projector: TypeProjector,
    /// Shared `[d′, d′]` map and `[d′]` bias for the linear encoder.
    pub encoder: Option<(ParamId, ParamId)>,
    pub instance: InstanceAttention,
    pub semantic: SemanticAttention,
}

impl AlignmentParams {
    pub fn new(params: &mut ParamSet, g: &HeteroGraph, dims: AlignDims, rng: &mut ModelRng) -> Result<Self> {
        let d = dims.hidden;
        if d == 0 || dims.heads == 0 || d % dims.heads != 0 || dims.attention_dim == 0 {
            return Err(Error::Config(format!(
                "hidden_dim {d} must be positive and divisible by num_heads {}; attention dim must be positive",
                dims.heads
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for nt in g.node_types() {
            let fan = nt.feature_dim;
            weights.push(params.add(format!("align.project.{}.weight", nt.name), fan_in_uniform(rng, &[d, fan], fan)));
            biases.push(params.add(format!("align.project.{}.bias", nt.name), fan_in_uniform(rng, &[d], fan)));
        }
        let encoder = match dims.encoder {
            InstanceEncoder::Mean => None,
            InstanceEncoder::Linear => Some((
                params.add("align.encoder.weight", fan_in_uniform(rng, &[d, d], d)),
                params.add("align.encoder.bias", fan_in_uniform(rng, &[d], d)),
            )),
        };
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for m in g.metapaths() {
            src.push(params.add(format!("align.attention.{}.src", m.name), fan_in_uniform(rng, &[d], 2 * d)));
            dst.push(params.add(format!("align.attention.{}.dst", m.name), fan_in_uniform(rng, &[d], 2 * d)));
        }
        let k = dims.attention_dim;
        let semantic = SemanticAttention {
            weight: params.add("align.semantic.weight", fan_in_uniform(rng, &[k, d], d)),
            bias: params.add("align.semantic.bias", fan_in_uniform(rng, &[k], d)),
            query: params.add("align.semantic.query", fan_in_uniform(rng, &[1, k], k)),
        };
        Ok(Self {
            dims,
            projector: TypeProjector { weights, biases },
            encoder,
            instance: InstanceAttention { src, dst },
            semantic,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.projector.weights.iter().chain(&self.projector.biases).copied().collect();
        if let Some((w, b)) = self.encoder {
            ids.extend([w, b]);
        }
        ids.extend(self.instance.src.iter().chain(&self.instance.dst));
        ids.extend([self.semantic.weight, self.semantic.bias, self.semantic.query]);
        ids
    }
}

/// Index plan for one metapath: every target with at least one instance.
#[derive(Debug, Clone)]
struct MetapathPlan {
    targets: Vec<NodeId>,
    /// Node ids of all instances, flattened.
    flat_nodes: Arc<[usize]>,
    /// Instance boundaries into `flat_nodes`.
    instance_offsets: Arc<[usize]>,
    /// Target of every instance.
    instance_targets: Arc<[usize]>,
    /// Target boundaries into the instance list.
    target_offsets: Arc<[usize]>,
}

/// Precomputed gather plan for aligning every node of a graph.
#[derive(Debug, Clone)]
pub struct Aligner {
    node_count: usize,
    /// Per node type: the node ids and their feature matrix.
    type_features: Vec<(Vec<NodeId>, Tensor)>,
    /// Row of each node in the type-concatenated projection.
    type_scatter: Arc<[usize]>,
    plans: Vec<MetapathPlan>,
    /// Semantic rows grouped by node: permutation of the metapath-concatenated rows.
    semantic_rows: Arc<[usize]>,
    semantic_offsets: Arc<[usize]>,
    /// Final gather over `[semantic outputs ; projected]`.
    output_rows: Arc<[usize]>,
}

impl Aligner {
    /// `tokens[i]` must be the token of node `i`, built over `g.metapaths()`.
    pub fn new(g: &HeteroGraph, tokens: &[Token]) -> Result<Self> {
        let n = g.node_count();
        if tokens.len() != n || tokens.iter().enumerate().any(|(i, t)| t.node != i) {
            return Err(Error::contract("one token per node, indexed by node id, is required"));
        }
        let k = g.metapaths().len();
        if tokens.iter().any(|t| t.instances.len() != k) {
            return Err(Error::contract("tokens were built over a different metapath list"));
        }

        let mut type_features = Vec::new();
        let mut type_scatter = vec![0; n];
        let mut row = 0;
        for (ty, nt) in g.node_types().iter().enumerate() {
            let nodes = g.nodes_of_type(ty);
            let mut data = Vec::with_capacity(nodes.len() * nt.feature_dim);
            for &v in &nodes {
                data.extend_from_slice(g.features(v));
                type_scatter[v] = row;
                row += 1;
            }
            let feats = Tensor::new(vec![nodes.len(), nt.feature_dim], data)?;
            type_features.push((nodes, feats));
        }

        let mut plans = Vec::with_capacity(k);
        // (node, metapath) -> row in the concatenation of per-metapath outputs
        let mut per_node: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut concat_row = 0;
        for m in 0..k {
            let mut targets = Vec::new();
            let mut flat = Vec::new();
            let mut inst_off = vec![0];
            let mut inst_tgt = Vec::new();
            let mut tgt_off = vec![0];
            for tok in tokens {
                let list = &tok.instances[m];
                if list.is_empty() {
                    continue;
                }
                let mut sorted: Vec<_> = list.iter().collect();
                sorted.sort();
                for inst in sorted {
                    flat.extend_from_slice(&inst.nodes);
                    inst_off.push(flat.len());
                    inst_tgt.push(tok.node);
                }
                tgt_off.push(inst_tgt.len());
                targets.push(tok.node);
                per_node[tok.node].push(concat_row);
                concat_row += 1;
            }
            plans.push(MetapathPlan {
                targets,
                flat_nodes: flat.into(),
                instance_offsets: inst_off.into(),
                instance_targets: inst_tgt.into(),
                target_offsets: tgt_off.into(),
            });
        }

        let mut semantic_rows = Vec::new();
        let mut semantic_offsets = vec![0];
        let mut output_rows = vec![0; n];
        let mut aligned = 0;
        let non_degenerate = per_node.iter().filter(|r| !r.is_empty()).count();
        for (v, rows) in per_node.iter().enumerate() {
            if rows.is_empty() {
                output_rows[v] = non_degenerate + v;
            } else {
                semantic_rows.extend_from_slice(rows);
                semantic_offsets.push(semantic_rows.len());
                output_rows[v] = aligned;
                aligned += 1;
            }
        }
        Ok(Self {
            node_count: n,
            type_features,
            type_scatter: type_scatter.into(),
            plans,
            semantic_rows: semantic_rows.into(),
            semantic_offsets: semantic_offsets.into(),
            output_rows: output_rows.into(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Type projections of every node, `[n, d′]` in node id order.
    pub fn project(&self, tape: &mut Tape, params: &ParamSet, p: &AlignmentParams) -> Result<Var> {
        let mut parts = Vec::new();
        for (ty, (nodes, feats)) in self.type_features.iter().enumerate() {
            if nodes.is_empty() {
                continue;
            }
            let x = tape.constant(feats.clone());
            let w = tape.param(params, p.projector.weights[ty]);
            let b = tape.param(params, p.projector.biases[ty]);
            parts.push(tape.linear(x, w, Some(b))?);
        }
        let stacked = tape.concat_rows(&parts)?;
        tape.gather_rows(stacked, self.type_scatter.clone())
    }

    /// Aligned representation of every node, `[n, d′]` in node id order.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, p: &AlignmentParams) -> Result<Var> {
        let h = self.project(tape, params, p)?;
        let heads = p.dims.heads;
        let mut per_metapath = Vec::new();
        for (m, plan) in self.plans.iter().enumerate() {
            if plan.targets.is_empty() {
                continue;
            }
            let nodes = tape.gather_rows(h, plan.flat_nodes.clone())?;
            let mut enc = tape.segment_mean(nodes, plan.instance_offsets.clone())?;
            if let Some((w, b)) = p.encoder {
                let (w, b) = (tape.param(params, w), tape.param(params, b));
                enc = tape.linear(enc, w, Some(b))?;
            }
            let tgt = tape.gather_rows(h, plan.instance_targets.clone())?;
            let a_src = tape.param(params, p.instance.src[m]);
            let a_dst = tape.param(params, p.instance.dst[m]);
            let s_src = tape.mul(tgt, a_src)?;
            let s_dst = tape.mul(enc, a_dst)?;
            let s_src = tape.block_sum_cols(s_src, heads)?;
            let s_dst = tape.block_sum_cols(s_dst, heads)?;
            let scores = tape.add(s_src, s_dst)?;
            let scores = tape.leaky_relu(scores)?;
            let alpha = tape.segment_softmax(scores, plan.target_offsets.clone())?;
            let alpha = tape.block_sum_cols(alpha, 1)?;
            let alpha = tape.scale(alpha, 1.0 / heads as f64)?;
            let mixed = tape.segment_weighted_sum(alpha, enc, plan.target_offsets.clone())?;
            per_metapath.push(tape.leaky_relu(mixed)?);
        }
        if per_metapath.is_empty() {
            return Ok(h);
        }
        let stacked = tape.concat_rows(&per_metapath)?;
        let grouped = tape.gather_rows(stacked, self.semantic_rows.clone())?;
        let w = tape.param(params, p.semantic.weight);
        let b = tape.param(params, p.semantic.bias);
        let q = tape.param(params, p.semantic.query);
        let hidden = tape.linear(grouped, w, Some(b))?;
        let hidden = tape.tanh(hidden)?;
        let scores = tape.linear(hidden, q, None)?;
        let beta = tape.segment_softmax(scores, self.semantic_offsets.clone())?;
        let mixed = tape.segment_weighted_sum(beta, grouped, self.semantic_offsets.clone())?;
        let all = tape.concat_rows(&[mixed, h])?;
        tape.gather_rows(all, self.output_rows.clone())
    }
}

/// `W_A·x + b_A` for one node.
pub fn project_node(params: &ParamSet, p: &AlignmentParams, node_type: usize, x: &[f64]) -> Result<Vec<f64>> {
    let (Some(&w), Some(&b)) = (p.projector.weights.get(node_type), p.projector.biases.get(node_type)) else {
        return Err(Error::contract(format!("no projection for node type {node_type}")));
    };
    let (w, b) = (params.get(w), params.get(b));
    let (d, fan) = (w.shape()[0], w.shape()[1]);
    if x.len() != fan {
        return Err(Error::dim(format!("feature width {} for a projection expecting {fan}", x.len())));
    }
    Ok((0..d)
        .map(|i| b.data()[i] + w.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect())
}

/// Mean of the projected vectors along one instance.
pub fn encode_instance(nodes: &[&[f64]]) -> Result<Vec<f64>> {
    let first = nodes.first().ok_or_else(|| Error::contract("cannot encode an empty instance"))?;
    // offsets from the first vector, so equal inputs reproduce it exactly
    let mut offset = vec![0.0; first.len()];
    for v in nodes {
        if v.len() != offset.len() {
            return Err(Error::dim("instance node vectors differ in width"));
        }
        offset.iter_mut().zip(v.iter().zip(*first)).for_each(|(o, (x, f))| *o += x - f);
    }
    let n = nodes.len() as f64;
    Ok(first.iter().zip(offset).map(|(f, o)| f + o / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    pub output: Vec<f64>,
    /// Attention weight of each input, in input order (head-averaged for
    /// instance attention).
    pub weights: Vec<f64>,
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Multi-head attention over the encoded instances of one target.
///
/// `a_src`, `a_dst` are the halves of `a_M`; each head scores its own slice
/// of `d′ / heads` coordinates. Inputs are reduced in sorted order, so any
/// permutation of `instances` gives a bitwise identical output.
pub fn aggregate_instances(a_src: &[f64], a_dst: &[f64], heads: usize, target: &[f64], instances: &[Vec<f64>]) -> Result<Attended> {
    let d = target.len();
    if instances.is_empty() {
        return Err(Error::contract("instance attention needs at least one instance"));
    }
    if heads == 0 || d % heads != 0 || a_src.len() != d || a_dst.len() != d || instances.iter().any(|v| v.len() != d) {
        return Err(Error::dim("instance attention widths disagree"));
    }
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.sort_by(|&i, &j| lexicographic(&instances[i], &instances[j]));
    let w = d / heads;
    let mut alpha = vec![0.0; instances.len()];
    for k in 0..heads {
        let span = k * w..(k + 1) * w;
        let base: f64 = a_src[span.clone()].iter().zip(&target[span.clone()]).map(|(a, x)| a * x).sum();
        let scores: Vec<f64> = order
            .iter()
            .map(|&i| {
                let s: f64 = a_dst[span.clone()].iter().zip(&instances[i][span.clone()]).map(|(a, x)| a * x).sum();
                leaky_relu(base + s, LEAKY_SLOPE)
            })
            .collect();
        for (pos, a) in softmax_slice(&scores).into_iter().enumerate() {
            alpha[pos] += a;
        }
    }
    alpha.iter_mut().for_each(|a| *a /= heads as f64);
    let mut output = vec![0.0; d];
    for (pos, &i) in order.iter().enumerate() {
        output.iter_mut().zip(&instances[i]).for_each(|(o, x)| *o += alpha[pos] * x);
    }
    output.iter_mut().for_each(|o| *o = leaky_relu(*o, LEAKY_SLOPE));
    let mut weights = vec![0.0; instances.len()];
    for (pos, &i) in order.iter().enumerate() {
        weights[i] = alpha[pos];
    }
    Ok(Attended { output, weights })
}

/// Semantic attention over the per-metapath vectors of one node.
///
/// `weight` is `[d_att, d′]` row-major.
pub fn aggregate_metapaths(weight: &[f64], bias: &[f64], query: &[f64], vectors: &[Vec<f64>]) -> Result<Attended> {
    let first = vectors.first().ok_or_else(|| Error::contract("semantic attention needs at least one metapath vector"))?;
    let d = first.len();
    let k = query.len();
    if bias.len() != k || weight.len() != k * d || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::dim("semantic attention widths disagree"));
    }
    let scores: Vec<f64> = vectors
        .iter()
        .map(|v| {
            (0..k)
                .map(|r| {
                    let z = bias[r] + weight[r * d..(r + 1) * d].iter().zip(v).map(|(a, x)| a * x).sum::<f64>();
                    query[r] * z.tanh()
                })
                .sum()
        })
        .collect();
    let beta = softmax_slice(&scores);
    let mut output = vec![0.0; d];
    for (b, v) in beta.iter().zip(vectors) {
        output.iter_mut().zip(v).for_each(|(o, x)| *o += b * x);
    }
    Ok(Attended { output, weights: beta })
}

/// Aligns a single token with the current parameter values.
pub fn align_token(params: &ParamSet, p: &AlignmentParams, g: &HeteroGraph, schemas: &[MetapathSchema], token: &Token) -> Result<Vec<f64>> {
    let project = |v: NodeId| project_node(params, p, g.type_of(v), g.features(v));
    let own = project(token.node)?;
    let mut per_metapath = Vec::new();
    for (m, list) in token.instances.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        if m >= schemas.len() || m >= p.instance.src.len() {
            return Err(Error::contract("token has more metapaths than the model"));
        }
        let mut encoded = Vec::with_capacity(list.len());
        for inst in list {
            let vecs = inst.nodes.iter().map(|&v| project(v)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[f64]> = vecs.iter().map(Vec::as_slice).collect();
            let mut e = encode_instance(&refs)?;
            if let Some((w, b)) = p.encoder {
                let (w, b) = (params.get(w), params.get(b));
                let d = e.len();
                e = (0..d)
                    .map(|i| b.data()[i] + w.row(i).iter().zip(&e).map(|(a, x)| a * x).sum::<f64>())
                    .collect();
            }
            encoded.push(e);
        }
        let att = aggregate_instances(
            params.get(p.instance.src[m]).data(),
            params.get(p.instance.dst[m]).data(),
            p.dims.heads,
            &own,
            &encoded,
        )?;
        per_metapath.push(att.output);
    }
    if per_metapath.is_empty() {
        return Ok(own);
    }
    let out = aggregate_metapaths(
        params.get(p.semantic.weight).data(),
        params.get(p.semantic.bias).data(),
        params.get(p.semantic.query).data(),
        &per_metapath,
    )?;
    Ok(out.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::hetgraph::{build_tokens, TokenOptions};
    use rand::SeedableRng;

    fn setup(encoder: InstanceEncoder) -> (HeteroGraph, Vec<Token>, ParamSet, AlignmentParams) {
        let g = fixtures::g0();
        let tokens = build_tokens(&g, g.metapaths(), &TokenOptions::default());
        let mut params = ParamSet::new();
        let mut rng = ModelRng::seed_from_u64(3);
        let dims = AlignDims {
            hidden: 4,
            heads: 2,
            attention_dim: 3,
            encoder,
        };
        let p = AlignmentParams::new(&mut params, &g, dims, &mut rng).unwrap();
        (g, tokens, params, p)
    }

    #[test]
    fn identity_projection() {
        let (_, _, mut params, p) = setup(InstanceEncoder::Mean);
        let w = params.get_mut(p.projector.weights[0]);
        w.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        params.get_mut(p.projector.biases[0]).data_mut().fill(0.0);
        let h = project_node(&params, &p, 0, &[2.5, -1.0]).unwrap();
        assert_eq!(h, vec![2.5, -1.0, 0.0, 0.0]);
        let b = params.get(p.projector.biases[1]).data().to_vec();
        assert_eq!(project_node(&params, &p, 1, &[0.0, 0.0]).unwrap(), b);
        assert!(matches!(project_node(&params, &p, 0, &[1.0]), Err(Error::Dimension(_))));
        assert!(matches!(project_node(&params, &p, 7, &[1.0, 1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn instance_encoding() {
        assert_eq!(encode_instance(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(encode_instance(&[&[3.0, 4.0]]).unwrap(), vec![3.0, 4.0]);
        let v = [0.1, 0.7];
        assert_eq!(encode_instance(&[&v, &v, &v]).unwrap(), v.to_vec());
        assert!(encode_instance(&[]).is_err());
    }

    #[test]
    fn instance_attention_singletons_and_ties() {
        let a = [0.3, -0.2, 0.9, 1.1];
        let one = aggregate_instances(&a, &a, 2, &[1.0; 4], &[vec![-1.0, 2.0, 0.5, 0.0]]).unwrap();
        assert_eq!(one.weights, vec![1.0]);
        assert_eq!(one.output, vec![-0.01, 2.0, 0.5, 0.0]);
        let same = vec![0.4, 0.1, -0.3, 0.2];
        let two = aggregate_instances(&a, &a, 2, &[1.0; 4], &[same.clone(), same]).unwrap();
        assert_eq!(two.weights, vec![0.5, 0.5]);
        assert!(aggregate_instances(&a, &a, 2, &[1.0; 4], &[]).is_err());
    }

    #[test]
    fn semantic_attention_singletons_and_ties() {
        let (w, b, q) = ([0.5, -0.5, 1.0, 0.2], [0.1, 0.0], [1.0, -2.0]);
        let v = vec![0.3, -0.7];
        let one = aggregate_metapaths(&w, &b, &q, &[v.clone()]).unwrap();
        assert_eq!((one.weights, one.output), (vec![1.0], v.clone()));
        let two = aggregate_metapaths(&w, &b, &q, &[v.clone(), v.clone()]).unwrap();
        assert_eq!(two.output, v);
    }

    #[test]
    fn batched_alignment_matches_per_token_reference() {
        for enc in [InstanceEncoder::Mean, InstanceEncoder::Linear] {
            let (g, tokens, params, p) = setup(enc);
            let aligner = Aligner::new(&g, &tokens).unwrap();
            let mut tape = Tape::new();
            let out = aligner.forward(&mut tape, &params, &p).unwrap();
            let out = tape.value(out);
            assert_eq!(out.shape(), &[5, 4]);
            for tok in &tokens {
                let reference = align_token(&params, &p, &g, g.metapaths(), tok).unwrap();
                for (a, b) in out.row(tok.node).iter().zip(&reference) {
                    assert!((a - b).abs() < 1e-12, "node {}: {a} vs {b}", tok.node);
                }
            }
        }
    }

    #[test]
    fn degenerate_tokens_fall_back_to_projection() {
        let (g, tokens, params, p) = setup(InstanceEncoder::Mean);
        // papers start no metapath in G₀
        for v in 2..5 {
            assert!(tokens[v].is_degenerate());
            let own = project_node(&params, &p, g.type_of(v), g.features(v)).unwrap();
            assert_eq!(align_token(&params, &p, &g, g.metapaths(), &tokens[v]).unwrap(), own);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for enc in [InstanceEncoder::Mean, InstanceEncoder::Linear] {
            let (g, tokens, mut params, p) = setup(enc);
            let mut rng = ModelRng::seed_from_u64(8);
            for id in p.param_ids() {
                let t = params.get_mut(id);
                let shape = t.shape().to_vec();
                *t = crate::init::uniform(&mut rng, &shape, -1.0, 1.0).with_grad();
            }
            let aligner = Aligner::new(&g, &tokens).unwrap();
            let probe = crate::init::uniform(&mut ModelRng::seed_from_u64(5), &[5, 4], -1.0, 1.0);
            let reports = crate::gradcheck::check_gradients(
                &params,
                |tape, ps| {
                    let out = aligner.forward(tape, ps, &p)?;
                    let w = tape.constant(probe.clone());
                    let prod = tape.mul(out, w)?;
                    Ok(tape.sum(prod))
                },
                1e-5,
                25,
                1,
            )
            .unwrap();
            for r in reports {
                assert!(r.max_rel_err <= 1e-4, "{r:?}");
            }
        }
    }
}
