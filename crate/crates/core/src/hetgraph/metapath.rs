// Validation errors carry the full offending signature; loading is not a hot path.
#![allow(clippy::result_large_err)]

use std::collections::{BTreeSet, HashMap};

use super::{EdgeType, HeteroGraph, MetapathDoc, NodeId};
use crate::error::{Error, Result, ValidationError};

/// A composite relation A₁ -R₁-> A₂ -R₂-> … -Rᵢ-> Aᵢ₊₁.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetapathSchema {
    /// Position of this schema in the graph's metapath list.
    pub index: usize,
    pub name: String,
    pub node_types: Vec<usize>,
    pub edge_types: Vec<usize>,
}

impl MetapathSchema {
    pub(super) fn resolve(
        index: usize,
        doc: &MetapathDoc,
        node_ix: &HashMap<&str, usize>,
        edge_ix: &HashMap<&str, usize>,
        edge_types: &[EdgeType],
    ) -> Result<Self, ValidationError> {
        let bad = |reason: String| ValidationError::InvalidMetapath {
            name: doc.name.clone(),
            reason,
        };
        if doc.node_types.len() < 2 {
            return Err(bad("needs at least two node types".into()));
        }
        if doc.edge_types.len() + 1 != doc.node_types.len() {
            return Err(bad(format!(
                "{} node types need {} edge types, got {}",
                doc.node_types.len(),
                doc.node_types.len() - 1,
                doc.edge_types.len()
            )));
        }
        let node_types = doc
            .node_types
            .iter()
            .map(|n| node_ix.get(n.as_str()).copied().ok_or_else(|| bad(format!("unknown node type `{n}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let edge_types_ids = doc
            .edge_types
            .iter()
            .map(|n| edge_ix.get(n.as_str()).copied().ok_or_else(|| bad(format!("unknown edge type `{n}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        for (j, &r) in edge_types_ids.iter().enumerate() {
            let et = &edge_types[r];
            let (a, b) = (node_types[j], node_types[j + 1]);
            let fits = (et.src_type == a && et.dst_type == b) || (et.symmetric && et.src_type == b && et.dst_type == a);
            if !fits {
                return Err(bad(format!("edge type `{}` does not connect step {} to step {}", et.name, j, j + 1)));
            }
        }
        Ok(Self {
            index,
            name: doc.name.clone(),
            node_types,
            edge_types: edge_types_ids,
        })
    }

    pub fn start_type(&self) -> usize {
        self.node_types[0]
    }

    /// Number of nodes on every instance.
    pub fn len(&self) -> usize {
        self.node_types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_types.is_empty()
    }
}

/// One typed walk following a schema.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MetapathInstance {
    pub schema: usize,
    pub nodes: Vec<NodeId>,
}

impl MetapathInstance {
    pub fn start(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn end(&self) -> NodeId {
        *self.nodes.last().expect("instances are never empty")
    }
}

fn walk(
    g: &HeteroGraph,
    schema: &MetapathSchema,
    simple_only: bool,
    limit: usize,
    path: &mut Vec<NodeId>,
    out: &mut Vec<MetapathInstance>,
) {
    if out.len() >= limit {
        return;
    }
    let step = path.len() - 1;
    if step == schema.edge_types.len() {
        out.push(MetapathInstance {
            schema: schema.index,
            nodes: path.clone(),
        });
        return;
    }
    let cur = path[step];
    let next_type = schema.node_types[step + 1];
    for &nbr in g.neighbors(schema.edge_types[step], cur) {
        if g.type_of(nbr) != next_type || (simple_only && path.contains(&nbr)) {
            continue;
        }
        path.push(nbr);
        walk(g, schema, simple_only, limit, path, out);
        path.pop();
    }
}

fn enumerate_limited(
    g: &HeteroGraph,
    schema: &MetapathSchema,
    start: NodeId,
    simple_only: bool,
    limit: usize,
) -> Result<Vec<MetapathInstance>> {
    if start >= g.node_count() {
        return Err(Error::contract(format!("node {start} out of range")));
    }
    if g.type_of(start) != schema.start_type() {
        return Err(Error::contract(format!(
            "node {start} has type `{}` but metapath `{}` starts at `{}`",
            g.node_types()[g.type_of(start)].name,
            schema.name,
            g.node_types()[schema.start_type()].name
        )));
    }
    let mut out = Vec::new();
    let mut path = vec![start];
    walk(g, schema, simple_only, limit, &mut path, &mut out);
    Ok(out)
}

/// All walks from `start` following `schema`, in lexicographic order of
/// their node sequences. Revisits (including end == start) are allowed.
pub fn enumerate_instances(g: &HeteroGraph, schema: &MetapathSchema, start: NodeId) -> Result<Vec<MetapathInstance>> {
    enumerate_limited(g, schema, start, false, usize::MAX)
}

/// Like [`enumerate_instances`], optionally excluding walks that repeat a node.
pub fn enumerate_instances_with(
    g: &HeteroGraph,
    schema: &MetapathSchema,
    start: NodeId,
    simple_paths_only: bool,
) -> Result<Vec<MetapathInstance>> {
    enumerate_limited(g, schema, start, simple_paths_only, usize::MAX)
}

/// Walk counts for every node, summed over the schemas that start at the
/// node's type. Computed by dynamic programming, without materializing walks.
pub fn count_all(g: &HeteroGraph, schemas: &[MetapathSchema]) -> Vec<u64> {
    let n = g.node_count();
    let mut total = vec![0u64; n];
    for schema in schemas {
        let last = *schema.node_types.last().expect("schemas have >= 2 node types");
        let mut counts: Vec<u64> = (0..n).map(|v| u64::from(g.type_of(v) == last)).collect();
        for j in (0..schema.edge_types.len()).rev() {
            let (here, next) = (schema.node_types[j], schema.node_types[j + 1]);
            counts = (0..n)
                .map(|v| {
                    if g.type_of(v) != here {
                        return 0;
                    }
                    g.neighbors(schema.edge_types[j], v)
                        .iter()
                        .filter(|&&u| g.type_of(u) == next)
                        .map(|&u| counts[u])
                        .fold(0u64, u64::saturating_add)
                })
                .collect();
        }
        for (t, c) in total.iter_mut().zip(counts) {
            *t = t.saturating_add(c);
        }
    }
    total
}

/// Instance count of `node` summed over matching schemas.
pub fn count_instances(g: &HeteroGraph, schemas: &[MetapathSchema], node: NodeId) -> u64 {
    count_instances_with(g, schemas, node, false)
}

pub fn count_instances_with(g: &HeteroGraph, schemas: &[MetapathSchema], node: NodeId, simple_paths_only: bool) -> u64 {
    if node >= g.node_count() {
        return 0;
    }
    if !simple_paths_only {
        return count_all(g, schemas)[node];
    }
    schemas
        .iter()
        .filter(|s| s.start_type() == g.type_of(node))
        .map(|s| enumerate_limited(g, s, node, true, usize::MAX).map_or(0, |v| v.len() as u64))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenOptions {
    /// Per (node, metapath) cap; the lexicographically first instances are kept.
    pub max_instances_per_node: usize,
    pub simple_paths_only: bool,
}

impl Default for TokenOptions {
    fn default() -> Self {
        Self {
            max_instances_per_node: 200,
            simple_paths_only: false,
        }
    }
}

/// The subgraph token of one target node: its instances under every schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub node: NodeId,
    /// One list per schema, in schema order; empty for schemas that start at
    /// another node type.
    pub instances: Vec<Vec<MetapathInstance>>,
    pub truncated: bool,
}

impl Token {
    /// True when no schema contributes an instance.
    pub fn is_degenerate(&self) -> bool {
        self.instances.iter().all(Vec::is_empty)
    }

    pub fn all_instances(&self) -> impl Iterator<Item = &MetapathInstance> {
        self.instances.iter().flatten()
    }

    pub fn instance_count(&self) -> usize {
        self.instances.iter().map(Vec::len).sum()
    }
}

pub fn build_token(g: &HeteroGraph, schemas: &[MetapathSchema], node: NodeId) -> Token {
    build_token_with(g, schemas, node, &TokenOptions::default())
}

pub fn build_token_with(g: &HeteroGraph, schemas: &[MetapathSchema], node: NodeId, opts: &TokenOptions) -> Token {
    let mut truncated = false;
    let instances = schemas
        .iter()
        .map(|s| {
            if node >= g.node_count() || s.start_type() != g.type_of(node) {
                return Vec::new();
            }
            let cap = opts.max_instances_per_node;
            let mut list = enumerate_limited(g, s, node, opts.simple_paths_only, cap.saturating_add(1))
                .expect("start type checked above");
            if list.len() > cap {
                list.truncate(cap);
                truncated = true;
            }
            list
        })
        .collect();
    Token {
        node,
        instances,
        truncated,
    }
}

/// Tokens for every node, indexed by node id.
pub fn build_tokens(g: &HeteroGraph, schemas: &[MetapathSchema], opts: &TokenOptions) -> Vec<Token> {
    (0..g.node_count()).map(|v| build_token_with(g, schemas, v, opts)).collect()
}

/// Nodes that lie on at least one instance of a schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetapathGraph {
    pub schema: usize,
    pub nodes: BTreeSet<NodeId>,
}

/// Computed by intersecting forward reachability from schema starts with
/// backward completability to schema ends at each position.
pub fn metapath_graph(g: &HeteroGraph, schema: &MetapathSchema) -> MetapathGraph {
    let n = g.node_count();
    let steps = schema.node_types.len();
    let mut fwd = vec![vec![false; n]; steps];
    for v in 0..n {
        fwd[0][v] = g.type_of(v) == schema.node_types[0];
    }
    for j in 0..steps - 1 {
        for v in 0..n {
            if !fwd[j][v] {
                continue;
            }
            for &u in g.neighbors(schema.edge_types[j], v) {
                if g.type_of(u) == schema.node_types[j + 1] {
                    fwd[j + 1][u] = true;
                }
            }
        }
    }
    let mut bwd = vec![vec![false; n]; steps];
    for v in 0..n {
        bwd[steps - 1][v] = g.type_of(v) == schema.node_types[steps - 1];
    }
    for j in (0..steps - 1).rev() {
        for v in 0..n {
            bwd[j][v] = g.type_of(v) == schema.node_types[j]
                && g.neighbors(schema.edge_types[j], v)
                    .iter()
                    .any(|&u| bwd[j + 1][u] && g.type_of(u) == schema.node_types[j + 1]);
        }
    }
    let nodes = (0..n).filter(|&v| (0..steps).any(|j| fwd[j][v] && bwd[j][v])).collect();
    MetapathGraph {
        schema: schema.index,
        nodes,
    }
}
