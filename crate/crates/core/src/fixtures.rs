//! Small hand-built graphs shared by tests, examples and the acceptance suite.

use crate::config::ModelConfig;
use crate::hetgraph::{EdgeDoc, EdgeTypeDoc, GraphDocument, HeteroGraph, MetapathDoc, NodeDoc, NodeTypeDoc, SplitsDoc};


/// Authors {a1=0, a2=1}, papers {p1=2, p2=3, p3=4}; undirected
/// authorship a1–p1, a1–p2, a2–p2, a2–p3; metapaths APA and AP.
pub fn g0_document() -> GraphDocument {
    let node = |id, t: &str| NodeDoc {
        id,
        node_type: t.to_string(),
        features: vec![id as f64, 1.0],
        label: None,
    };
    let edge = |s, d| EdgeDoc {
        edge_type: "writes".into(),
        src: s,
        dst: d,
    };
    GraphDocument {
        node_types: vec![
            NodeTypeDoc {
                name: "author".into(),
                feature_dim: 2,
            },
            NodeTypeDoc {
                name: "paper".into(),
                feature_dim: 2,
            },
        ],
        edge_types: vec![EdgeTypeDoc {
            name: "writes".into(),
            src_type: "author".into(),
            dst_type: "paper".into(),
            symmetric: true,
        }],
        nodes: vec![node(0, "author"), node(1, "author"), node(2, "paper"), node(3, "paper"), node(4, "paper")],
        edges: vec![edge(0, 2), edge(0, 3), edge(1, 3), edge(1, 4)],
        metapaths: vec![
            MetapathDoc {
                name: "APA".into(),
                node_types: vec!["author".into(), "paper".into(), "author".into()],
                edge_types: vec!["writes".into(), "writes".into()],
            },
            MetapathDoc {
                name: "AP".into(),
                node_types: vec!["author".into(), "paper".into()],
                edge_types: vec!["writes".into()],
            },
        ],
        splits: SplitsDoc::default(),
    }
}

pub fn g0() -> HeteroGraph {
    HeteroGraph::from_document(&g0_document()).unwrap()
}


/// Twelve nodes of three types (authors, papers, venues) with labels on
/// authors and papers, used for gradient checks.
pub fn twelve_node_document() -> GraphDocument {
    let types = [("author", 3usize), ("paper", 4), ("venue", 2)];
    // node id -> type index
    let layout = [0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2];
    let nodes = layout
        .iter()
        .enumerate()
        .map(|(id, &t)| {
            let dim = types[t].1;
            NodeDoc {
                id,
                node_type: types[t].0.into(),
                features: (0..dim).map(|j| (((id * 7 + j * 3) % 11) as f64 - 5.0) / 2.5).collect(),
                label: (t < 2).then_some(id % 3),
            }
        })
        .collect();
    let e = |ty: &str, s, d| EdgeDoc {
        edge_type: ty.into(),
        src: s,
        dst: d,
    };
    let edges = vec![
        e("writes", 0, 4),
        e("writes", 0, 5),
        e("writes", 1, 5),
        e("writes", 1, 6),
        e("writes", 2, 6),
        e("writes", 2, 7),
        e("writes", 3, 8),
        e("writes", 0, 8),
        e("published_in", 4, 9),
        e("published_in", 5, 9),
        e("published_in", 6, 10),
        e("published_in", 7, 10),
        e("published_in", 8, 11),
        e("cites", 4, 6),
        e("cites", 5, 7),
        e("cites", 8, 4),
        e("cites", 4, 7),
        e("cites", 6, 7),
        e("cites", 6, 8),
        e("cites", 7, 5),
        e("cites", 8, 6),
    ];
    let mp = |name: &str, nt: &[&str], et: &[&str]| MetapathDoc {
        name: name.into(),
        node_types: nt.iter().map(|s| s.to_string()).collect(),
        edge_types: et.iter().map(|s| s.to_string()).collect(),
    };
    GraphDocument {
        node_types: types
            .iter()
            .map(|(n, d)| NodeTypeDoc {
                name: n.to_string(),
                feature_dim: *d,
            })
            .collect(),
        edge_types: vec![
            EdgeTypeDoc {
                name: "writes".into(),
                src_type: "author".into(),
                dst_type: "paper".into(),
                symmetric: true,
            },
            EdgeTypeDoc {
                name: "published_in".into(),
                src_type: "paper".into(),
                dst_type: "venue".into(),
                symmetric: true,
            },
            EdgeTypeDoc {
                name: "cites".into(),
                src_type: "paper".into(),
                dst_type: "paper".into(),
                symmetric: false,
            },
        ],
        nodes,
        edges,
        metapaths: vec![
            mp("APA", &["author", "paper", "author"], &["writes", "writes"]),
            mp("APVPA", &["author", "paper", "venue", "paper", "author"], &["writes", "published_in", "published_in", "writes"]),
            mp("PAP", &["paper", "author", "paper"], &["writes", "writes"]),
            mp("PP", &["paper", "paper"], &["cites"]),
            mp("PVP", &["paper", "venue", "paper"], &["published_in", "published_in"]),
        ],
        splits: SplitsDoc {
            train: vec![0, 1, 4, 5, 6],
            val: vec![2, 7],
            test: vec![3, 8],
        },
    }
}

pub fn twelve_node_graph() -> HeteroGraph {
    HeteroGraph::from_document(&twelve_node_document()).unwrap()
}

/// A one-layer model small enough for central differences to resolve
/// every parameter's derivative once weights are moved off their
/// initialisation with [`crate::model::HgmnModel::randomize_weights`].
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        num_layers: 1,
        num_heads: 2,
        metapath_attention_dim: 4,
        state_dim: 4,
        num_epochs: 4,
        learning_rate: 1e-2,
        seed: 0,
        ..ModelConfig::hgb()
    }
}
