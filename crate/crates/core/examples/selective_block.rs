//! One selective state space block applied to a short sequence. The block
//! is residual, so zeroing its projections leaves the identity map, which is
//! how the ablation tests take the scans out of the model.

use hgmn::autodiff::ParamSet;
use hgmn::init::ModelRng;
use hgmn::ssm::selective::{BlockDims, SelectiveSsmBlock};
use hgmn::tensor::Tensor;
use rand::SeedableRng;

fn main() -> hgmn::Result<()> {
    let mut params = ParamSet::new();
    let mut rng = ModelRng::seed_from_u64(3);
    let block = SelectiveSsmBlock::new(&mut params, "demo", BlockDims::new(4, 8), true, &mut rng);
    let rows: Vec<Vec<f64>> = (0..6).map(|t| (0..4).map(|j| ((t * 4 + j) as f64 * 0.37).sin()).collect()).collect();
    let x = Tensor::from_rows(&rows)?;

    let y = block.apply(&params, &x)?;
    for t in 0..6 {
        println!("t={t}  in {:+.3?}  out {:+.4?}", x.row(t), y.row(t));
    }

    // causality: changing the last input leaves earlier outputs untouched
    let mut late = rows.clone();
    late[5] = vec![9.0; 4];
    let y2 = block.apply(&params, &Tensor::from_rows(&late)?)?;
    println!("prefix unchanged: {}", (0..5).all(|t| y.row(t) == y2.row(t)));

    block.zero_projections(&mut params);
    let zeroed = block.apply(&params, &x)?;
    println!("zeroed block returns its input: {}", zeroed == x);
    Ok(())
}
