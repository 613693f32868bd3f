//! Typed-walk enumeration, per-node counts and subgraph tokens on the small
//! author/paper graph.

use hgmn::fixtures;
use hgmn::hetgraph::{build_token, count_all, enumerate_instances};

fn main() -> hgmn::Result<()> {
    let g = fixtures::g0();
    let names = |ids: &[usize]| ids.iter().map(|&v| format!("{v}")).collect::<Vec<_>>().join(" -> ");
    for schema in g.metapaths() {
        println!("metapath {}", schema.name);
        let counts = count_all(&g, std::slice::from_ref(schema));
        for v in g.nodes_of_type(schema.start_type()) {
            println!("  node {v}: {} instances", counts[v]);
            for inst in enumerate_instances(&g, schema, v)? {
                println!("    {}", names(&inst.nodes));
            }
        }
    }
    let token = build_token(&g, g.metapaths(), 0);
    println!("token of node 0: {} instances, truncated {}", token.instance_count(), token.truncated);
    Ok(())
}
