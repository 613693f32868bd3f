use std::sync::Arc;

use hgmn::autodiff::{Activation, ParamId, ParamSet, Tape, Var};
use hgmn::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    params: ParamSet,
    x: ParamId,
    w: ParamId,
    b: ParamId,
    gather: Arc<[usize]>,
    offsets: Arc<[usize]>,
    picks: Arc<[usize]>,
    mix: Vec<Tensor>,
}

fn case(m: usize, d: usize, o: usize, seed: u64) -> Case {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut t = |shape: &[usize], scale: f64| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-scale..scale)).collect()).unwrap()
    };
    let mut params = ParamSet::new();
    let x = params.add("x", t(&[m, d], 1.5).with_grad());
    let w = params.add("w", t(&[o, d], 1.0).with_grad());
    let b = params.add("b", t(&[o], 0.5).with_grad());
    let k = m + 1;
    let mix0 = t(&[k + m, o], 1.0);
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let gather: Arc<[usize]> = (0..k).map(|_| r.gen_range(0..m)).collect();
    let mut cuts: Vec<usize> = (1..m).filter(|_| r.gen_bool(0.4)).collect();
    cuts.insert(0, 0);
    cuts.push(m);
    let picks: Arc<[usize]> = (0..m).map(|_| r.gen_range(0..o)).collect();
    let segs = cuts.len() - 1;
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 2);
    let mut t = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let mix = vec![mix0, t(&[segs, d]), t(&[segs, d])];
    Case {
        params,
        x,
        w,
        b,
        gather,
        offsets: cuts.into(),
        picks,
        mix,
    }
}

/// A scalar touching every differentiable op the model uses.
fn loss(c: &Case, tape: &mut Tape, p: &ParamSet) -> hgmn::Result<Var> {
    let (x, w, b) = (tape.param(p, c.x), tape.param(p, c.w), tape.param(p, c.b));
    let h = tape.linear(x, w, Some(b))?;
    let a = tape.tanh(h)?;
    let s = tape.silu(h)?;
    let prod = tape.mul(a, s)?;
    let q = tape.softmax(prod)?;
    let l = tape.log_softmax(h)?;
    let g = tape.gather_rows(q, c.gather.clone())?;
    let cat = tape.concat_rows(&[g, l])?;
    let m0 = tape.constant(c.mix[0].clone());
    let t0 = tape.mul(cat, m0)?;
    let term0 = tape.sum(t0);

    let col = tape.slice_cols(h, 0, 1)?;
    let sm = tape.segment_softmax(col, c.offsets.clone())?;
    let ws = tape.segment_weighted_sum(sm, x, c.offsets.clone())?;
    let m1 = tape.constant(c.mix[1].clone());
    let t1 = tape.mul(ws, m1)?;
    let term1 = tape.sum(t1);

    let sp = tape.softplus(x)?;
    let mean = tape.segment_mean(sp, c.offsets.clone())?;
    let m2 = tape.constant(c.mix[2].clone());
    let t2 = tape.mul(mean, m2)?;
    let term2 = tape.sum(t2);

    let picked = tape.pick_per_row(l, c.picks.clone())?;
    let term3 = tape.mean(picked)?;
    let e = tape.exp(b)?;
    let sig = tape.activation(e, Activation::Sigmoid)?;
    let term4 = tape.sum(sig);
    let bs = tape.block_sum_cols(h, 1)?;
    let sq = tape.mul(bs, bs)?;
    let term5 = tape.mean(sq)?;

    let mut total = tape.add(term0, term1)?;
    for t in [term2, term3, term4, term5] {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

fn value(c: &Case, p: &ParamSet) -> f64 {
    let mut tape = Tape::new();
    let root = loss(c, &mut tape, p).unwrap();
    tape.value(root).item().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tape_matches_central_differences(m in 1usize..6, d in 1usize..5, o in 1usize..4, seed in any::<u64>()) {
        let c = case(m, d, o, seed);
        let mut analytic = c.params.clone();
        let mut tape = Tape::new();
        let root = loss(&c, &mut tape, &analytic).unwrap();
        tape.backward(root).unwrap().accumulate(&mut analytic);

        let eps = 1e-5;
        let mut probe = c.params.clone();
        for id in [c.x, c.w, c.b] {
            let grad = analytic.get(id).grad.clone().unwrap();
            for i in 0..probe.get(id).len() {
                let orig = probe.get(id).data()[i];
                probe.get_mut(id).data_mut()[i] = orig + eps;
                let up = value(&c, &probe);
                probe.get_mut(id).data_mut()[i] = orig - eps;
                let down = value(&c, &probe);
                probe.get_mut(id).data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                prop_assert!(
                    (grad[i] - numeric).abs() <= 1e-7 + 1e-5 * numeric.abs(),
                    "{}[{}]: tape {} vs numeric {}", c.params.name(id), i, grad[i], numeric
                );
            }
        }
    }
}
