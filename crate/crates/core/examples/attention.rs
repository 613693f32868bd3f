//! Instance-level and metapath-level attention on hand-made vectors: the
//! weights form a distribution and the pooled vector stays in their hull.

use hgmn::alignment::{aggregate_instances, aggregate_metapaths};

fn main() -> hgmn::Result<()> {
    let target = [0.5, -0.2, 0.1, 0.9];
    let instances = vec![vec![1.0, 0.0, 0.5, 0.2], vec![-0.5, 1.0, 0.0, 0.4], vec![0.2, 0.2, -1.0, 0.8]];
    let a_src = [0.3, 0.1, -0.2, 0.5];
    let a_dst = [1.0, -0.5, 0.7, 0.2];
    let inst = aggregate_instances(&a_src, &a_dst, 2, &target, &instances)?;
    println!("instance weights {:.4?} (sum {:.3})", inst.weights, inst.weights.iter().sum::<f64>());
    println!("pooled           {:.4?}", inst.output);

    let vectors = vec![inst.output.clone(), vec![0.1, 0.1, 0.1, 0.1]];
    let weight = [0.4, -0.1, 0.3, 0.2, -0.6, 0.5, 0.1, 0.0];
    let sem = aggregate_metapaths(&weight, &[0.0, 0.1], &[1.0, -1.0], &vectors)?;
    println!("metapath weights {:.4?}", sem.weights);
    println!("fused            {:.4?}", sem.output);
    Ok(())
}
