//! Finite-difference check of every parameter group of a one-layer model on
//! the twelve-node graph, at a redrawn generic weight point.

use hgmn::fixtures;
use hgmn::model::HgmnModel;
use hgmn::train::gradient_check;

fn main() -> hgmn::Result<()> {
    let g = fixtures::twelve_node_graph();
    let mut model = HgmnModel::new(&g, &fixtures::gradcheck_config())?;
    model.randomize_weights(100, 2.0);
    let report = gradient_check(&model, &g, 1e-5, 25)?;
    for r in &report.groups {
        println!("{:<40} {:>3} coords  max rel err {:.2e}", r.name, r.coordinates, r.max_rel_err);
    }
    println!("worst {:.2e} over {} groups (tolerance 1e-4)", report.max_rel_err(), report.groups.len());
    Ok(())
}
