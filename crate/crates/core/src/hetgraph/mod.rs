//! Typed heterogeneous graphs, metapath instances and per-node tokens.
//!
//! A [`HeteroGraph`] maps every node to a node type and every edge to an
//! edge type whose signature fixes the endpoint types. Undirected
//! (symmetric) edge types are stored as two directed arcs. Adjacency is kept
//! per edge type in CSR form with neighbor lists sorted by id, so every
//! traversal is deterministic.

// Validation errors carry the full offending signature; loading is not a hot path.
#![allow(clippy::result_large_err)]

mod document;
mod metapath;

pub use document::{EdgeDoc, EdgeTypeDoc, GraphDocument, MetapathDoc, NodeDoc, NodeTypeDoc, SplitsDoc};
pub use metapath::{
    build_token, build_token_with, build_tokens, count_all, count_instances, count_instances_with,
    enumerate_instances, enumerate_instances_with, metapath_graph, MetapathGraph, MetapathInstance,
    MetapathSchema, Token, TokenOptions,
};

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result, ValidationError};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeType {
    pub name: String,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeType {
    pub name: String,
    pub src_type: usize,
    pub dst_type: usize,
    pub symmetric: bool,
}

/// Compressed sparse row adjacency for one edge type.
#[derive(Debug, Clone, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
}

impl Csr {
    fn from_arcs(node_count: usize, mut arcs: Vec<(NodeId, NodeId)>) -> Self {
        arcs.sort_unstable();
        arcs.dedup();
        let mut offsets = vec![0; node_count + 1];
        for &(s, _) in &arcs {
            offsets[s + 1] += 1;
        }
        for i in 0..node_count {
            offsets[i + 1] += offsets[i];
        }
        Self {
            offsets,
            targets: arcs.into_iter().map(|(_, d)| d).collect(),
        }
    }

    fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<NodeId>,
    pub val: Vec<NodeId>,
    pub test: Vec<NodeId>,
}

/// Validated, immutable heterogeneous graph.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    node_types: Vec<NodeType>,
    edge_types: Vec<EdgeType>,
    node_type: Vec<usize>,
    features: Vec<Vec<f64>>,
    labels: Vec<Option<usize>>,
    adjacency: Vec<Csr>,
    degree: Vec<usize>,
    metapaths: Vec<MetapathSchema>,
    splits: Splits,
}

impl HeteroGraph {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&GraphDocument::from_json(text)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_document(doc: &GraphDocument) -> Result<Self> {
        Ok(load_graph(doc)?)
    }

    pub fn node_count(&self) -> usize {
        self.node_type.len()
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn edge_types(&self) -> &[EdgeType] {
        &self.edge_types
    }

    pub fn node_type_id(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t.name == name)
    }

    pub fn edge_type_id(&self, name: &str) -> Option<usize> {
        self.edge_types.iter().position(|t| t.name == name)
    }

    /// Type id of `node`. Panics on an out-of-range id.
    pub fn type_of(&self, node: NodeId) -> usize {
        self.node_type[node]
    }

    pub fn features(&self, node: NodeId) -> &[f64] {
        &self.features[node]
    }

    pub fn label(&self, node: NodeId) -> Option<usize> {
        self.labels[node]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// One more than the largest label present.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |m| m + 1)
    }

    pub fn metapaths(&self) -> &[MetapathSchema] {
        &self.metapaths
    }

    pub fn metapath(&self, name: &str) -> Option<&MetapathSchema> {
        self.metapaths.iter().find(|m| m.name == name)
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    /// Nodes of one type, ascending by id.
    pub fn nodes_of_type(&self, type_id: usize) -> Vec<NodeId> {
        (0..self.node_count()).filter(|&v| self.node_type[v] == type_id).collect()
    }

    /// Neighbors of `node` along arcs of `edge_type`, ascending by id.
    pub fn neighbors(&self, edge_type: usize, node: NodeId) -> &[NodeId] {
        self.adjacency[edge_type].neighbors(node)
    }

    /// Incident edge count over all edge types.
    pub fn degree(&self, node: NodeId) -> Result<usize> {
        self.degree.get(node).copied().ok_or_else(|| {
            Error::contract(format!("node {node} out of range 0..{}", self.node_count()))
        })
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degree
    }

    /// Document that reproduces this graph.
    pub fn to_document(&self) -> GraphDocument {
        let tname = |t: usize| self.node_types[t].name.clone();
        let mut edges = Vec::new();
        for (r, et) in self.edge_types.iter().enumerate() {
            for s in 0..self.node_count() {
                for &d in self.neighbors(r, s) {
                    // each undirected edge is emitted once, from its signature source side
                    let keep = !et.symmetric
                        || (self.node_type[s] == et.src_type && (et.src_type != et.dst_type || s <= d));
                    if keep {
                        edges.push(EdgeDoc {
                            edge_type: et.name.clone(),
                            src: s,
                            dst: d,
                        });
                    }
                }
            }
        }
        GraphDocument {
            node_types: self
                .node_types
                .iter()
                .map(|t| NodeTypeDoc {
                    name: t.name.clone(),
                    feature_dim: t.feature_dim,
                })
                .collect(),
            edge_types: self
                .edge_types
                .iter()
                .map(|e| EdgeTypeDoc {
                    name: e.name.clone(),
                    src_type: tname(e.src_type),
                    dst_type: tname(e.dst_type),
                    symmetric: e.symmetric,
                })
                .collect(),
            nodes: (0..self.node_count())
                .map(|v| NodeDoc {
                    id: v,
                    node_type: tname(self.node_type[v]),
                    features: self.features[v].clone(),
                    label: self.labels[v],
                })
                .collect(),
            edges,
            metapaths: self
                .metapaths
                .iter()
                .map(|m| MetapathDoc {
                    name: m.name.clone(),
                    node_types: m.node_types.iter().map(|&t| tname(t)).collect(),
                    edge_types: m.edge_types.iter().map(|&r| self.edge_types[r].name.clone()).collect(),
                })
                .collect(),
            splits: SplitsDoc {
                train: self.splits.train.clone(),
                val: self.splits.val.clone(),
                test: self.splits.test.clone(),
            },
        }
    }
}

fn index_names<'a>(names: impl Iterator<Item = &'a str>) -> Result<HashMap<&'a str, usize>, ValidationError> {
    let mut map = HashMap::new();
    for (i, n) in names.enumerate() {
        if map.insert(n, i).is_some() {
            return Err(ValidationError::DuplicateTypeName(n.to_string()));
        }
    }
    Ok(map)
}

/// Validates a graph document and builds the canonical graph.
pub fn load_graph(doc: &GraphDocument) -> Result<HeteroGraph, ValidationError> {
    if doc.nodes.is_empty() {
        return Err(ValidationError::NoNodes);
    }
    let ntype_ix = index_names(doc.node_types.iter().map(|t| t.name.as_str()))?;
    let etype_ix = index_names(doc.edge_types.iter().map(|t| t.name.as_str()))?;

    let node_types: Vec<NodeType> = doc
        .node_types
        .iter()
        .map(|t| NodeType {
            name: t.name.clone(),
            feature_dim: t.feature_dim,
        })
        .collect();

    let mut edge_types = Vec::with_capacity(doc.edge_types.len());
    for et in &doc.edge_types {
        let lookup = |name: &str| {
            ntype_ix.get(name).copied().ok_or_else(|| ValidationError::UnknownSignatureType {
                edge_type: et.name.clone(),
                type_name: name.to_string(),
            })
        };
        edge_types.push(EdgeType {
            name: et.name.clone(),
            src_type: lookup(&et.src_type)?,
            dst_type: lookup(&et.dst_type)?,
            symmetric: et.symmetric,
        });
    }

    let n = doc.nodes.len();
    let mut slot: Vec<Option<usize>> = vec![None; n];
    for (i, node) in doc.nodes.iter().enumerate() {
        if node.id >= n {
            let missing = (0..n).find(|&id| !doc.nodes.iter().any(|x| x.id == id)).unwrap_or(0);
            return Err(ValidationError::SparseNodeIds { count: n, id: missing });
        }
        if slot[node.id].replace(i).is_some() {
            return Err(ValidationError::DuplicateNodeId(node.id));
        }
    }

    let mut node_type = vec![0; n];
    let mut features = vec![Vec::new(); n];
    let mut labels = vec![None; n];
    for (id, ix) in slot.iter().enumerate() {
        let node = &doc.nodes[ix.expect("ids are dense and unique")];
        let t = *ntype_ix.get(node.node_type.as_str()).ok_or_else(|| ValidationError::UnknownNodeType {
            node: id,
            type_name: node.node_type.clone(),
        })?;
        if node.features.len() != node_types[t].feature_dim {
            return Err(ValidationError::RaggedFeatures {
                node: id,
                type_name: node.node_type.clone(),
                expected: node_types[t].feature_dim,
                got: node.features.len(),
            });
        }
        if node.features.iter().any(|v| !v.is_finite()) {
            return Err(ValidationError::NonFiniteFeature { node: id });
        }
        node_type[id] = t;
        features[id] = node.features.clone();
        labels[id] = node.label;
    }

    let mut arcs: Vec<Vec<(NodeId, NodeId)>> = vec![Vec::new(); edge_types.len()];
    for (i, e) in doc.edges.iter().enumerate() {
        let r = *etype_ix.get(e.edge_type.as_str()).ok_or_else(|| ValidationError::UnknownEdgeType {
            edge: i,
            type_name: e.edge_type.clone(),
        })?;
        if e.src >= n || e.dst >= n {
            return Err(ValidationError::EdgeEndpointOutOfRange {
                edge: i,
                src: e.src,
                dst: e.dst,
            });
        }
        let et = &edge_types[r];
        let (ts, td) = (node_type[e.src], node_type[e.dst]);
        let forward = ts == et.src_type && td == et.dst_type;
        let backward = et.symmetric && ts == et.dst_type && td == et.src_type;
        if !forward && !backward {
            return Err(ValidationError::SignatureViolation {
                edge: i,
                edge_type: et.name.clone(),
                src: e.src,
                dst: e.dst,
                src_type: node_types[ts].name.clone(),
                dst_type: node_types[td].name.clone(),
                expected_src: node_types[et.src_type].name.clone(),
                expected_dst: node_types[et.dst_type].name.clone(),
            });
        }
        arcs[r].push((e.src, e.dst));
        if et.symmetric {
            arcs[r].push((e.dst, e.src));
        }
    }

    let mut degree = vec![0usize; n];
    let adjacency: Vec<Csr> = arcs
        .into_iter()
        .zip(&edge_types)
        .map(|(a, et)| {
            let csr = Csr::from_arcs(n, a);
            for s in 0..n {
                for &d in csr.neighbors(s) {
                    // both arcs of an undirected edge are stored, one per endpoint
                    degree[s] += 1;
                    if !et.symmetric {
                        degree[d] += 1;
                    }
                }
            }
            csr
        })
        .collect();

    let mut metapaths = Vec::with_capacity(doc.metapaths.len());
    for (index, m) in doc.metapaths.iter().enumerate() {
        metapaths.push(MetapathSchema::resolve(index, m, &ntype_ix, &etype_ix, &edge_types)?);
    }

    let splits = validate_splits(&doc.splits, &labels)?;

    Ok(HeteroGraph {
        node_types,
        edge_types,
        node_type,
        features,
        labels,
        adjacency,
        degree,
        metapaths,
        splits,
    })
}

fn validate_splits(doc: &SplitsDoc, labels: &[Option<usize>]) -> Result<Splits, ValidationError> {
    let n = labels.len();
    let mut owner: Vec<Option<&str>> = vec![None; n];
    for (name, list) in [("train", &doc.train), ("val", &doc.val), ("test", &doc.test)] {
        for &id in list {
            let bad = |reason: String| ValidationError::InvalidSplit {
                split: name.to_string(),
                reason,
            };
            if id >= n {
                return Err(bad(format!("node {id} out of range")));
            }
            if labels[id].is_none() {
                return Err(bad(format!("node {id} has no label")));
            }
            if let Some(prev) = owner[id] {
                return Err(bad(format!("node {id} already belongs to `{prev}`")));
            }
            owner[id] = Some(name);
        }
    }
    Ok(Splits {
        train: doc.train.clone(),
        val: doc.val.clone(),
        test: doc.test.clone(),
    })
}

#[cfg(test)]
mod tests {
    use crate::fixtures::*;
    use super::*;

    #[test]
    fn empty_node_list_is_rejected() {
        let mut doc = g0_document();
        doc.nodes.clear();
        doc.edges.clear();
        let err = load_graph(&doc).unwrap_err();
        assert_eq!(err, ValidationError::NoNodes);
        assert_eq!(err.to_string(), "graph has no nodes");
    }

    #[test]
    fn minimal_two_node_graph() {
        let mut doc = g0_document();
        doc.nodes.truncate(1);
        doc.nodes.push(NodeDoc {
            id: 1,
            node_type: "paper".into(),
            features: vec![0.0, 0.0],
            label: None,
        });
        doc.edges = vec![EdgeDoc {
            edge_type: "writes".into(),
            src: 0,
            dst: 1,
        }];
        let g = load_graph(&doc).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.degree(0).unwrap(), 1);
    }

    #[test]
    fn signature_violation_names_edge() {
        let mut doc = g0_document();
        doc.edges.push(EdgeDoc {
            edge_type: "writes".into(),
            src: 0,
            dst: 1,
        });
        let err = load_graph(&doc).unwrap_err();
        assert!(matches!(err, ValidationError::SignatureViolation { edge: 4, .. }), "{err}");
        assert!(err.to_string().contains("(author, author)"));
    }

    #[test]
    fn unknown_types_are_rejected() {
        let mut doc = g0_document();
        doc.nodes[2].node_type = "venue".into();
        assert!(matches!(load_graph(&doc), Err(ValidationError::UnknownNodeType { node: 2, .. })));

        let mut doc = g0_document();
        doc.edges[0].edge_type = "cites".into();
        assert!(matches!(load_graph(&doc), Err(ValidationError::UnknownEdgeType { edge: 0, .. })));
    }

    #[test]
    fn ragged_features_are_rejected() {
        let mut doc = g0_document();
        doc.nodes[3].features.push(1.0);
        assert!(matches!(
            load_graph(&doc),
            Err(ValidationError::RaggedFeatures { node: 3, expected: 2, got: 3, .. })
        ));
    }

    #[test]
    fn duplicate_and_sparse_ids_are_rejected() {
        let mut doc = g0_document();
        doc.nodes[1].id = 0;
        assert_eq!(load_graph(&doc).unwrap_err(), ValidationError::DuplicateNodeId(0));

        let mut doc = g0_document();
        doc.nodes[4].id = 9;
        assert!(matches!(load_graph(&doc), Err(ValidationError::SparseNodeIds { id: 4, .. })));
    }

    #[test]
    fn bad_metapath_signature_is_rejected() {
        let mut doc = g0_document();
        doc.metapaths[0].node_types = vec!["author".into(), "author".into(), "author".into()];
        assert!(matches!(load_graph(&doc), Err(ValidationError::InvalidMetapath { .. })));
    }

    #[test]
    fn split_overlap_is_rejected() {
        let mut doc = g0_document();
        doc.nodes[0].label = Some(0);
        doc.splits.train = vec![0];
        doc.splits.test = vec![0];
        assert!(matches!(load_graph(&doc), Err(ValidationError::InvalidSplit { .. })));
    }

    #[test]
    fn g0_degrees() {
        let g = g0();
        assert_eq!(g.degree(0).unwrap(), 2);
        assert_eq!(g.degree(3).unwrap(), 2);
        assert_eq!(g.degrees(), &[2, 2, 1, 2, 1]);
        assert!(g.degree(99).is_err());
    }

    #[test]
    fn isolated_node_has_zero_degree() {
        let mut doc = g0_document();
        doc.nodes.push(NodeDoc {
            id: 5,
            node_type: "paper".into(),
            features: vec![0.0, 0.0],
            label: None,
        });
        assert_eq!(load_graph(&doc).unwrap().degree(5).unwrap(), 0);
    }

    #[test]
    fn adjacency_is_sorted_regardless_of_edge_order() {
        let mut doc = g0_document();
        doc.edges.reverse();
        let g = load_graph(&doc).unwrap();
        assert_eq!(g, g0());
        assert_eq!(g.neighbors(0, 3), &[0, 1]);
    }

    #[test]
    fn document_round_trip() {
        let g = g0();
        assert_eq!(HeteroGraph::from_document(&g.to_document()).unwrap(), g);
    }
}
