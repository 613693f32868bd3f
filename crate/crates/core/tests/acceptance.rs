//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use hgmn::alignment::{aggregate_instances, aggregate_metapaths};
use hgmn::config::{InnerOrderMode, ModelConfig, OuterOrderMode};
use hgmn::hetgraph::{count_all, count_instances, enumerate_instances, HeteroGraph};
use hgmn::model::{HgmnModel, Prepared};
use hgmn::ordering::{inner_order, outer_order, InnerMode, OuterMode};
use hgmn::ssm::{zoh_discretize, LtiParams, StateMatrix};
use hgmn::synthetic::{generate, SyntheticSpec};
use hgmn::train::{gradient_check, Trainer};
use hgmn::{fixtures, selftest};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scan_duality() -> Outcome {
    let err = selftest::scan_duality(100, 2024).unwrap();
    outcome(err <= 1e-9, format!("max |recurrence - convolution| {err:.2e} over 100 draws (limit 1e-9)"))
}

fn zoh() -> Outcome {
    let disc = |a: f64, b: f64, delta: f64| {
        let d = zoh_discretize(&LtiParams {
            a: StateMatrix::Diagonal(vec![a]),
            b: vec![b],
            c: vec![1.0],
            delta,
        })
        .unwrap();
        let StateMatrix::Diagonal(ab) = d.a_bar else { unreachable!() };
        (ab[0], d.b_bar[0])
    };
    let (a_half, b_half) = disc(-1.0, 1.0, std::f64::consts::LN_2);
    let scalar = (a_half - 0.5).abs().max((b_half - 0.5).abs());
    let (a_small, b_small) = disc(-1.0, 1.0, 1e-9);
    let small_a = (a_small - 1.0).abs();
    let small_b = (b_small - 1e-9).abs();
    // removable singularity: (e^x - 1)/x -> 1 + x/2 + x^2/6
    let mut series: f64 = 0.0;
    for a in [0.0, 1e-13, -1e-13, 4e-13] {
        let (_, b) = disc(a, 1.0, 1.0);
        series = series.max((b - (1.0 + a / 2.0 + a * a / 6.0)).abs());
    }
    let report = selftest::zoh_checks().unwrap();
    let pass = scalar <= 1e-12 && small_a <= 1e-6 && small_b <= 1e-12 && series <= 1e-10 && report.passes();
    outcome(
        pass,
        format!("ln2 case err {scalar:.1e}; dt=1e-9 |A-I| {small_a:.1e}, |B-dtB| {small_b:.1e}; limit vs series {series:.1e}"),
    )
}

fn lti_reduction() -> Outcome {
    let err = selftest::selective_reduces_to_lti(20, 99).unwrap();
    outcome(err <= 1e-10, format!("max per-channel error {err:.2e} on length-64 sequences (limit 1e-10)"))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let g = fixtures::twelve_node_graph();
    let mut model = HgmnModel::new(&g, &fixtures::gradcheck_config()).unwrap();
    model.randomize_weights(100, 2.0);
    let fine = gradient_check(&model, &g, 1e-5, 25).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let coarse = gradient_check(&model, &g, 2e-5, 25).unwrap();
    let failing: Vec<&str> = fine.groups.iter().filter(|r| r.max_rel_err > 1e-4).map(|r| r.name.as_str()).collect();
    // the 2e-5 figure is informational: near-zero src-half gradients sit on the 1e-8 floor
    let pass = failing.is_empty() && secs < 60.0;
    outcome(
        pass,
        format!(
            "{} groups, worst rel err {:.2e} at eps 1e-5 ({:.2e} at 2e-5), {} failing {:?}, {secs:.1} s",
            fine.groups.len(),
            fine.max_rel_err(),
            coarse.max_rel_err(),
            failing.len(),
            failing
        ),
    )
}

fn enumeration() -> Outcome {
    let (mut walks, mut mismatches) = (0usize, 0usize);
    for seed in 0..100 {
        let doc = common::random_typed_graph(seed);
        let g = HeteroGraph::from_document(&doc).unwrap();
        for schema in g.metapaths() {
            let one = std::slice::from_ref(schema);
            let counts = count_all(&g, one);
            for v in 0..g.node_count() {
                let expected = common::brute_force_walks(&doc, &schema.name, v);
                walks += expected.len();
                let listed: Vec<Vec<usize>> = if g.type_of(v) == schema.start_type() {
                    enumerate_instances(&g, schema, v).unwrap().into_iter().map(|i| i.nodes).collect()
                } else {
                    Vec::new()
                };
                let n = expected.len() as u64;
                if listed != expected || counts[v] != n || count_instances(&g, one, v) != n {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(mismatches == 0, format!("100 graphs, {walks} walks compared, {mismatches} mismatching (node, metapath) pairs"))
}

fn ordering() -> Outcome {
    let mut sorted = true;
    for seed in 0..100 {
        let g = HeteroGraph::from_document(&common::random_typed_graph(seed)).unwrap();
        let inner = inner_order(&g, g.metapaths(), InnerMode::Count);
        let outer = outer_order(&g, OuterMode::Degree);
        sorted &= inner.groups.iter().chain([&outer.sequence]).all(|s| s.keys.windows(2).all(|w| w[0] <= w[1]));
    }
    let mut equivariant = true;
    for seed in 0..50 {
        let n = 2 + (seed as usize % 30);
        let doc = common::distinct_degree_graph(n, seed);
        let pi = common::random_permutation(n, seed + 1000);
        let (g, h) = (HeteroGraph::from_document(&doc).unwrap(), HeteroGraph::from_document(&doc.relabeled(&pi)).unwrap());
        let map = |v: &[usize]| v.iter().map(|&x| pi[x]).collect::<Vec<_>>();
        equivariant &= outer_order(&h, OuterMode::Degree).sequence.nodes == map(&outer_order(&g, OuterMode::Degree).sequence.nodes);
        equivariant &= inner_order(&h, h.metapaths(), InnerMode::Count).groups[0].nodes
            == map(&inner_order(&g, g.metapaths(), InnerMode::Count).groups[0].nodes);
    }
    let g0 = fixtures::g0();
    let apa = vec![g0.metapath("APA").unwrap().clone()];
    let inner = inner_order(&g0, &apa, InnerMode::Count);
    let outer = outer_order(&g0, OuterMode::Degree);
    let g0_ok = inner.groups[0].nodes == [0, 1]
        && inner.groups[0].keys == [3, 3]
        && outer.sequence.nodes == [2, 4, 0, 1, 3]
        && outer.sequence.keys == [1, 1, 2, 2, 2];
    outcome(
        sorted && equivariant && g0_ok,
        format!("keys sorted on 100 graphs: {sorted}; relabeling equivariance on 50 distinct-key graphs: {equivariant}; G0 orders: {g0_ok}"),
    )
}

fn attention() -> Outcome {
    let leaky = |x: f64| if x >= 0.0 { x } else { 0.01 * x };
    let mut rng = common::rng(7);
    let (mut worst_sum, mut worst_hull): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let heads = rng.gen_range(1..4);
        let d = heads * rng.gen_range(1..4);
        let count = rng.gen_range(1..10);
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<f64>>();
        let (src, dst, target) = (draw(d), draw(d), draw(d));
        let xs: Vec<Vec<f64>> = (0..count).map(|_| draw(d)).collect();
        let a = aggregate_instances(&src, &dst, heads, &target, &xs).unwrap();
        worst_sum = worst_sum.max((a.weights.iter().sum::<f64>() - 1.0).abs());
        for j in 0..d {
            let mix: f64 = a.weights.iter().zip(&xs).map(|(w, x)| w * x[j]).sum();
            let lo = xs.iter().map(|x| x[j]).fold(f64::INFINITY, f64::min);
            let hi = xs.iter().map(|x| x[j]).fold(f64::NEG_INFINITY, f64::max);
            worst_hull = worst_hull.max(lo - mix).max(mix - hi).max((a.output[j] - leaky(mix)).abs());
        }
        let k = rng.gen_range(1..5);
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
        let (w, b, q) = (draw(k * d), draw(k), draw(k));
        let vs: Vec<Vec<f64>> = (0..count).map(|_| draw(d)).collect();
        let s = aggregate_metapaths(&w, &b, &q, &vs).unwrap();
        worst_sum = worst_sum.max((s.weights.iter().sum::<f64>() - 1.0).abs());
        for j in 0..d {
            let lo = vs.iter().map(|x| x[j]).fold(f64::INFINITY, f64::min);
            let hi = vs.iter().map(|x| x[j]).fold(f64::NEG_INFINITY, f64::max);
            worst_hull = worst_hull.max(lo - s.output[j]).max(s.output[j] - hi);
        }
    }
    outcome(
        worst_sum <= 1e-12 && worst_hull <= 1e-12,
        format!("100 trials: worst |sum - 1| {worst_sum:.1e}, worst hull violation {worst_hull:.1e}"),
    )
}

fn learnability() -> Outcome {
    let run = |signal: f64| {
        let start = Instant::now();
        let spec = SyntheticSpec { signal, seed: 7, ..Default::default() };
        let g = HeteroGraph::from_document(&generate(&spec).unwrap()).unwrap();
        let mut t = Trainer::new(&g, &ModelConfig::hgb()).unwrap();
        t.run(|_| {}).unwrap();
        (t.best_metric, g.node_count(), start.elapsed().as_secs_f64())
    };
    let (signal, nodes, t1) = run(0.9);
    let (control, _, t0) = run(0.0);
    outcome(
        signal >= 0.95 && control <= 0.45 && t1 < 120.0 && t0 < 120.0,
        format!(
            "{nodes} nodes, hgb preset, 150 epochs: best val macro-F1 {signal:.3} at s=0.9 ({t1:.0} s), {control:.3} at s=0.0 ({t0:.0} s)"
        ),
    )
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn cli_train(out: &Path, extra: &[&str]) -> bool {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hgmn"));
    cmd.arg("train").arg(fixture("twelve.json")).arg("--config").arg(fixture("tiny.cfg")).arg("--out").arg(out);
    cmd.args(extra);
    cmd.output().map(|o| o.status.success()).unwrap_or(false)
}

fn identical(a: &Path, b: &Path, files: &[&str]) -> bool {
    files.iter().all(|f| match (std::fs::read(a.join(f)), std::fs::read(b.join(f))) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    })
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ran = cli_train(&a, &[]) && cli_train(&b, &[]);
    let same = identical(&a, &b, &["metrics.csv", "checkpoint.bin", "best.bin"]);
    outcome(ran && same, format!("two seeded `hgmn train` runs: completed {ran}, metrics.csv and checkpoints byte-identical {same}"))
}

fn ablation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut reproducible = true;
    for (name, flags) in [
        ("inner", &["--no-inner-order"][..]),
        ("outer", &["--no-outer-order"]),
        ("both", &["--no-inner-order", "--no-outer-order"]),
    ] {
        let (a, b) = (dir.path().join(format!("{name}-a")), dir.path().join(format!("{name}-b")));
        reproducible &= cli_train(&a, flags) && cli_train(&b, flags) && identical(&a, &b, &["metrics.csv", "checkpoint.bin"]);
    }
    let mut identical_logits = true;
    let synthetic = HeteroGraph::from_document(&generate(&SyntheticSpec::default()).unwrap()).unwrap();
    for g in [fixtures::twelve_node_graph(), synthetic] {
        let full = ModelConfig { hidden_dim: 16, num_heads: 2, metapath_attention_dim: 8, ..ModelConfig::hgb() };
        let logits = |inner, outer| {
            let c = ModelConfig { inner_order_mode: inner, outer_order_mode: outer, ..full.clone() };
            let mut m = HgmnModel::new(&g, &c).unwrap();
            m.zero_ssm_blocks();
            m.logits(&Prepared::new(&g, &c).unwrap()).unwrap()
        };
        let reference = logits(InnerOrderMode::Count, OuterOrderMode::Degree);
        identical_logits &= [
            (InnerOrderMode::Random, OuterOrderMode::Degree),
            (InnerOrderMode::Count, OuterOrderMode::Random),
            (InnerOrderMode::Random, OuterOrderMode::Random),
        ]
        .into_iter()
        .all(|(i, o)| logits(i, o) == reference);
    }
    outcome(
        reproducible && identical_logits,
        format!("ablation runs reproducible: {reproducible}; zeroed-block logits identical to full model: {identical_logits}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("scan duality", scan_duality),
        ("ZOH correctness", zoh),
        ("selective scan reduces to LTI", lti_reduction),
        ("gradient suite", gradients),
        ("enumeration oracle", enumeration),
        ("ordering invariants", ordering),
        ("attention distributions", attention),
        ("end-to-end learnability", learnability),
        ("determinism", determinism),
        ("ablation plumbing", ablation),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} {:>2} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
