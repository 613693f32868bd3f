#![allow(dead_code)]

use std::collections::BTreeSet;

use hgmn::hetgraph::{EdgeDoc, EdgeTypeDoc, GraphDocument, MetapathDoc, NodeDoc, NodeTypeDoc, SplitsDoc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Up to 30 nodes of 1..=3 types, 1..=4 edge types with random signatures
/// and directions, and 1..=3 metapaths of 2..=4 node types.
pub fn random_typed_graph(seed: u64) -> GraphDocument {
    let mut r = rng(seed);
    let types = r.gen_range(1..=3);
    let n = r.gen_range(1..=30);
    let node_type: Vec<usize> = (0..n).map(|_| r.gen_range(0..types)).collect();
    let tname = |t: usize| format!("t{t}");
    let edge_types: Vec<(usize, usize, bool)> = (0..r.gen_range(1..=4))
        .map(|_| (r.gen_range(0..types), r.gen_range(0..types), r.gen_bool(0.5)))
        .collect();
    let of_type = |t: usize| (0..n).filter(|&v| node_type[v] == t).collect::<Vec<_>>();
    let mut edges = Vec::new();
    for (e, &(s, d, _)) in edge_types.iter().enumerate() {
        let (ss, ds) = (of_type(s), of_type(d));
        if ss.is_empty() || ds.is_empty() {
            continue;
        }
        for _ in 0..r.gen_range(0..=40) {
            edges.push(EdgeDoc {
                edge_type: format!("r{e}"),
                src: *ss.choose(&mut r).unwrap(),
                dst: *ds.choose(&mut r).unwrap(),
            });
        }
    }
    let mut metapaths = Vec::new();
    for m in 0..r.gen_range(1..=3) {
        let mut nts = vec![r.gen_range(0..types)];
        let mut ets = Vec::new();
        for _ in 0..r.gen_range(1..=3) {
            let cur = *nts.last().unwrap();
            let options: Vec<(usize, usize)> = edge_types
                .iter()
                .enumerate()
                .flat_map(|(e, &(s, d, sym))| {
                    let mut o = Vec::new();
                    if s == cur {
                        o.push((e, d));
                    }
                    if sym && d == cur {
                        o.push((e, s));
                    }
                    o
                })
                .collect();
            let Some(&(e, next)) = options.choose(&mut r) else { break };
            ets.push(e);
            nts.push(next);
        }
        if !ets.is_empty() {
            metapaths.push(MetapathDoc {
                name: format!("m{m}"),
                node_types: nts.into_iter().map(tname).collect(),
                edge_types: ets.into_iter().map(|e| format!("r{e}")).collect(),
            });
        }
    }
    GraphDocument {
        node_types: (0..types).map(|t| NodeTypeDoc { name: tname(t), feature_dim: 2 }).collect(),
        edge_types: edge_types
            .iter()
            .enumerate()
            .map(|(e, &(s, d, sym))| EdgeTypeDoc {
                name: format!("r{e}"),
                src_type: tname(s),
                dst_type: tname(d),
                symmetric: sym,
            })
            .collect(),
        nodes: (0..n)
            .map(|v| NodeDoc {
                id: v,
                node_type: tname(node_type[v]),
                features: vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)],
                label: None,
            })
            .collect(),
        edges,
        metapaths,
        splits: SplitsDoc::default(),
    }
}

/// Every walk from `start` along the metapath, found by trying every node
/// at every step against the raw edge list. Sorted and deduplicated.
pub fn brute_force_walks(doc: &GraphDocument, metapath: &str, start: usize) -> Vec<Vec<usize>> {
    let m = doc.metapaths.iter().find(|m| m.name == metapath).unwrap();
    let ty = |v: usize| doc.nodes.iter().find(|n| n.id == v).unwrap().node_type.clone();
    let sym = |e: &str| doc.edge_types.iter().find(|t| t.name == e).unwrap().symmetric;
    let step = |e: &str, u: usize, v: usize| {
        doc.edges
            .iter()
            .any(|x| x.edge_type == e && ((x.src == u && x.dst == v) || (sym(e) && x.src == v && x.dst == u)))
    };
    if ty(start) != m.node_types[0] {
        return Vec::new();
    }
    let n = doc.nodes.len();
    let mut found = BTreeSet::new();
    let mut stack = vec![vec![start]];
    while let Some(path) = stack.pop() {
        let k = path.len() - 1;
        if k == m.edge_types.len() {
            found.insert(path);
            continue;
        }
        for v in 0..n {
            if ty(v) == m.node_types[k + 1] && step(&m.edge_types[k], path[k], v) {
                let mut p = path.clone();
                p.push(v);
                stack.push(p);
            }
        }
    }
    found.into_iter().collect()
}

/// One node type `x`, one undirected edge type `e` with edges `{i, j}` for
/// `i + j ≥ n` (self-loops included), so node `i` has degree `i`. Ids are
/// then shuffled, features and labels drawn at random. The `XX` metapath
/// counts equal degrees, so inner and outer keys are both all distinct.
pub fn distinct_degree_graph(n: usize, seed: u64) -> GraphDocument {
    let mut r = rng(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i..n {
            if i + j >= n {
                edges.push(EdgeDoc {
                    edge_type: "e".into(),
                    src: perm[i],
                    dst: perm[j],
                });
            }
        }
    }
    let mut nodes: Vec<NodeDoc> = (0..n)
        .map(|v| NodeDoc {
            id: v,
            node_type: "x".into(),
            features: (0..3).map(|_| r.gen_range(-1.0..1.0)).collect(),
            label: Some(r.gen_range(0..2)),
        })
        .collect();
    nodes[0].label = Some(0);
    if n > 1 {
        nodes[1].label = Some(1);
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut r);
    let cut = (n / 2).max(1);
    GraphDocument {
        node_types: vec![NodeTypeDoc { name: "x".into(), feature_dim: 3 }],
        edge_types: vec![EdgeTypeDoc {
            name: "e".into(),
            src_type: "x".into(),
            dst_type: "x".into(),
            symmetric: true,
        }],
        nodes,
        edges,
        metapaths: vec![MetapathDoc {
            name: "XX".into(),
            node_types: vec!["x".into(), "x".into()],
            edge_types: vec!["e".into()],
        }],
        splits: SplitsDoc {
            train: ids[..cut].to_vec(),
            val: ids[cut..].to_vec(),
            test: Vec::new(),
        },
    }
}

pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng(seed));
    p
}
