//! JSON graph document: the on-disk form of a [`HeteroGraph`](super::HeteroGraph).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub node_types: Vec<NodeTypeDoc>,
    pub edge_types: Vec<EdgeTypeDoc>,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
    #[serde(default)]
    pub metapaths: Vec<MetapathDoc>,
    #[serde(default)]
    pub splits: SplitsDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTypeDoc {
    pub name: String,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTypeDoc {
    pub name: String,
    pub src_type: String,
    pub dst_type: String,
    #[serde(default)]
    pub symmetric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: usize,
    #[serde(rename = "type")]
    pub node_type: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    #[serde(rename = "type")]
    pub edge_type: String,
    pub src: usize,
    pub dst: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetapathDoc {
    pub name: String,
    pub node_types: Vec<String>,
    pub edge_types: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitsDoc {
    #[serde(default)]
    pub train: Vec<usize>,
    #[serde(default)]
    pub val: Vec<usize>,
    #[serde(default)]
    pub test: Vec<usize>,
}

impl GraphDocument {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph documents always serialize")
    }

    /// Renames node `i` to `perm[i]`, carrying features, labels, edges and
    /// splits along. Node records are re-sorted by their new id.
    pub fn relabeled(&self, perm: &[usize]) -> GraphDocument {
        let mut doc = self.clone();
        for n in &mut doc.nodes {
            n.id = perm[n.id];
        }
        doc.nodes.sort_by_key(|n| n.id);
        for e in &mut doc.edges {
            e.src = perm[e.src];
            e.dst = perm[e.dst];
        }
        for list in [&mut doc.splits.train, &mut doc.splits.val, &mut doc.splits.test] {
            for id in list.iter_mut() {
                *id = perm[*id];
            }
        }
        doc
    }
}
