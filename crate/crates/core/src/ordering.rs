//! Graph-to-sequence ordering.
//!
//! Inner order: one sequence per node type, ascending metapath-instance
//! count. Outer order: one sequence over every node, ascending degree.
//! Ties go to the smaller node id, so the heaviest nodes sit at the end of
//! a causal scan where they see the most context.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::hetgraph::{count_all, HeteroGraph, MetapathSchema, NodeId};
use crate::init::ModelRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerMode {
    Count,
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterMode {
    Degree,
    Random(u64),
}

/// A permutation of (a subset of) node ids together with its sort keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    /// Node id at each sequence position.
    pub nodes: Vec<NodeId>,
    /// Key of each position (instance count or degree).
    pub keys: Vec<u64>,
}

impl Sequence {
    fn sorted(mut nodes: Vec<NodeId>, key: impl Fn(NodeId) -> u64) -> Self {
        nodes.sort_by_key(|&v| (key(v), v));
        let keys = nodes.iter().map(|&v| key(v)).collect();
        Self { nodes, keys }
    }

    fn shuffled(mut nodes: Vec<NodeId>, key: impl Fn(NodeId) -> u64, rng: &mut ModelRng) -> Self {
        nodes.sort_unstable();
        nodes.shuffle(rng);
        let keys = nodes.iter().map(|&v| key(v)).collect();
        Self { nodes, keys }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn indices(&self) -> Arc<[usize]> {
        self.nodes.clone().into()
    }
}

/// One sequence per node type, indexed by type id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedGroups {
    pub groups: Vec<Sequence>,
    /// For each node: its row in the concatenation of all groups.
    pub inverse: Vec<usize>,
}

impl OrderedGroups {
    /// Node ids of every group, concatenated in type order.
    pub fn concatenated(&self) -> Vec<NodeId> {
        self.groups.iter().flat_map(|s| s.nodes.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalOrder {
    pub sequence: Sequence,
    /// Sequence position of each node.
    pub inverse: Vec<usize>,
}

fn invert(order: &[NodeId], n: usize) -> Vec<usize> {
    let mut inv = vec![usize::MAX; n];
    for (pos, &v) in order.iter().enumerate() {
        inv[v] = pos;
    }
    inv
}

pub fn inner_order(g: &HeteroGraph, schemas: &[MetapathSchema], mode: InnerMode) -> OrderedGroups {
    let counts = count_all(g, schemas);
    inner_order_with_counts(g, &counts, mode)
}

/// As [`inner_order`] with precomputed per-node instance counts.
pub fn inner_order_with_counts(g: &HeteroGraph, counts: &[u64], mode: InnerMode) -> OrderedGroups {
    let key = |v: NodeId| counts[v];
    let mut rng = match mode {
        InnerMode::Random(seed) => Some(ModelRng::seed_from_u64(seed)),
        InnerMode::Count => None,
    };
    let groups: Vec<Sequence> = (0..g.node_types().len())
        .map(|ty| {
            let nodes = g.nodes_of_type(ty);
            match rng.as_mut() {
                Some(r) => Sequence::shuffled(nodes, key, r),
                None => Sequence::sorted(nodes, key),
            }
        })
        .collect();
    let concat: Vec<NodeId> = groups.iter().flat_map(|s| s.nodes.iter().copied()).collect();
    OrderedGroups {
        inverse: invert(&concat, g.node_count()),
        groups,
    }
}

pub fn outer_order(g: &HeteroGraph, mode: OuterMode) -> GlobalOrder {
    let degrees = g.degrees();
    let key = |v: NodeId| degrees[v] as u64;
    let nodes: Vec<NodeId> = (0..g.node_count()).collect();
    let sequence = match mode {
        OuterMode::Degree => Sequence::sorted(nodes, key),
        OuterMode::Random(seed) => Sequence::shuffled(nodes, key, &mut ModelRng::seed_from_u64(seed)),
    };
    GlobalOrder {
        inverse: invert(&sequence.nodes, g.node_count()),
        sequence,
    }
}

/// Gathers the rows of `vectors` (one per node id) into sequence order.
pub fn apply_order(order: &[NodeId], vectors: &Tensor) -> Result<Tensor> {
    let d = vectors.last_dim();
    let n = vectors.rows();
    let mut out = Vec::with_capacity(order.len() * d);
    for &v in order {
        if v >= n {
            return Err(Error::contract(format!("no vector for node {v}")));
        }
        out.extend_from_slice(vectors.row(v));
    }
    Tensor::new(vec![order.len(), d], out)
}

/// Inverse of [`apply_order`] for an order that covers every node once.
pub fn scatter_back(order: &[NodeId], sequence: &Tensor) -> Result<Tensor> {
    let d = sequence.last_dim();
    if sequence.rows() != order.len() {
        return Err(Error::contract(format!(
            "{} sequence rows for an order of {} nodes",
            sequence.rows(),
            order.len()
        )));
    }
    let mut out = vec![f64::NAN; order.len() * d];
    let mut seen = vec![false; order.len()];
    for (pos, &v) in order.iter().enumerate() {
        if v >= order.len() || std::mem::replace(&mut seen[v], true) {
            return Err(Error::contract(format!("order is not a permutation (node {v})")));
        }
        out[v * d..(v + 1) * d].copy_from_slice(sequence.row(pos));
    }
    Tensor::new(vec![order.len(), d], out)
}

impl InnerMode {
    pub fn label(self) -> &'static str {
        match self {
            Self::Count => "count",
            Self::Random(_) => "random",
        }
    }
}

impl OuterMode {
    pub fn label(self) -> &'static str {
        match self {
            Self::Degree => "degree",
            Self::Random(_) => "random",
        }
    }
}
