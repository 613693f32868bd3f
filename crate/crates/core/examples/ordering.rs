//! Inner (per type, by instance count) and outer (global, by degree)
//! sequence orders, next to their seeded random ablations.

use hgmn::fixtures;
use hgmn::ordering::{inner_order, outer_order, InnerMode, OuterMode};

fn main() {
    let g = fixtures::twelve_node_graph();
    let inner = inner_order(&g, g.metapaths(), InnerMode::Count);
    for (ty, seq) in inner.groups.iter().enumerate() {
        println!("{:<8} nodes {:?}  counts {:?}", g.node_types()[ty].name, seq.nodes, seq.keys);
    }
    let outer = outer_order(&g, OuterMode::Degree);
    println!("global   nodes {:?}\n         degree {:?}", outer.sequence.nodes, outer.sequence.keys);

    let shuffled = inner_order(&g, g.metapaths(), InnerMode::Random(1));
    println!("random inner {:?}", shuffled.concatenated());
    println!("random outer {:?}", outer_order(&g, OuterMode::Random(2)).sequence.nodes);
}
