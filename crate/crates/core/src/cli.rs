//! The `hgmn` command line. [`run`] is the whole program minus process exit,
//! so tests can drive it in-process.
//!
//! Exit codes: 0 success, 1 validation failure (bad graph, config, spec,
//! checkpoint or unreadable input), 2 numeric failure (non-finite values,
//! failed self-test or gradient check), 64 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{InnerOrderMode, ModelConfig, OuterOrderMode};
use crate::error::{Error, Result};
use crate::hetgraph::{count_instances, enumerate_instances, GraphDocument, HeteroGraph, NodeId};
use crate::model::HgmnModel;
use crate::report::RunManifest;
use crate::selftest;
use crate::synthetic::{generate, neighbour_agreement, SyntheticSpec};
use crate::train::{gradient_check, Checkpoint, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Tolerance for `gradcheck`.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "hgmn", version, about = "Typed-graph node classification with selective state space layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a graph document and report the first rule it breaks.
    Validate { graph: PathBuf },
    /// Write a planted-signal graph to `<out>/graph.json`.
    GenSynthetic {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count (or list) metapath instances.
    Enumerate {
        graph: PathBuf,
        #[arg(long)]
        metapath: String,
        /// Node id, or a type prefix plus 1-based index within the type (`a1`).
        #[arg(long)]
        node: Option<String>,
        /// With --node, print every instance after the count.
        #[arg(long, requires = "node")]
        instances: bool,
    },
    /// Train and write checkpoints, manifest.json and metrics.csv to `<out>`.
    Train {
        graph: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seeded random inner order instead of instance-count order.
        #[arg(long)]
        no_inner_order: bool,
        /// Seeded random outer order instead of degree order.
        #[arg(long)]
        no_outer_order: bool,
    },
    /// Score a checkpoint on every split.
    Eval {
        graph: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Central-difference check of every parameter group.
    Gradcheck {
        graph: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long, default_value_t = 25)]
        samples: usize,
        /// Redraw weights at this gain before checking (0 keeps the initialisation).
        #[arg(long, default_value_t = 2.0)]
        gain: f64,
        #[arg(long, default_value_t = 100)]
        weights_seed: u64,
    },
    /// Kernel equivalence suites.
    Selftest,
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_INVALID
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Validate { graph } => validate(&graph, out),
        Command::GenSynthetic { spec, out: dir } => gen_synthetic(&spec, &dir, out),
        Command::Enumerate {
            graph,
            metapath,
            node,
            instances,
        } => enumerate(&graph, &metapath, node.as_deref(), instances, out),
        Command::Train {
            graph,
            config,
            out: dir,
            no_inner_order,
            no_outer_order,
        } => train(&graph, &config, &dir, no_inner_order, no_outer_order, out),
        Command::Eval { graph, checkpoint } => eval(&graph, &checkpoint, out),
        Command::Gradcheck {
            graph,
            config,
            epsilon,
            samples,
            gain,
            weights_seed,
        } => gradcheck(&graph, &config, epsilon, samples, gain, weights_seed, out),
        Command::Selftest => run_selftest(out),
    }
}

fn validate(path: &Path, out: &mut dyn Write) -> Result<i32> {
    let doc = GraphDocument::from_json(&std::fs::read_to_string(path)?)?;
    let g = HeteroGraph::from_document(&doc)?;
    let per_type: Vec<String> = g
        .node_types()
        .iter()
        .enumerate()
        .map(|(t, nt)| format!("{} {}", nt.name, g.nodes_of_type(t).len()))
        .collect();
    writeln!(
        out,
        "valid: {} nodes ({}), {} edges, {} metapaths, {} classes",
        g.node_count(),
        per_type.join(", "),
        doc.edges.len(),
        g.metapaths().len(),
        g.num_classes()
    )?;
    Ok(EXIT_OK)
}

fn gen_synthetic(spec_path: &Path, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let spec = SyntheticSpec::from_file(spec_path)?;
    let doc = generate(&spec)?;
    let g = HeteroGraph::from_document(&doc)?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join("graph.json");
    crate::train::write_atomic(&path, doc.to_json().as_bytes())?;
    writeln!(
        out,
        "wrote {} ({} nodes, {} edges); ICI label agreement {:.3}",
        path.display(),
        g.node_count(),
        doc.edges.len(),
        neighbour_agreement(&g, 1000, spec.seed)?
    )?;
    Ok(EXIT_OK)
}

/// Resolves `17` or `a1` (first node of the type whose name starts with `a`).
pub fn resolve_node(g: &HeteroGraph, spec: &str) -> Result<NodeId> {
    if let Ok(id) = spec.parse::<NodeId>() {
        return if id < g.node_count() {
            Ok(id)
        } else {
            Err(Error::contract(format!("node {id} is out of range (graph has {})", g.node_count())))
        };
    }
    let split = spec
        .find(|c: char| c.is_ascii_digit())
        .ok_or_else(|| Error::contract(format!("cannot read `{spec}` as a node")))?;
    let (prefix, index) = spec.split_at(split);
    let index: usize = index
        .parse()
        .map_err(|_| Error::contract(format!("cannot read `{spec}` as a node")))?;
    let types: Vec<usize> = (0..g.node_types().len())
        .filter(|&t| g.node_types()[t].name.starts_with(prefix))
        .collect();
    let [t] = types[..] else {
        return Err(Error::contract(format!("`{prefix}` does not name exactly one node type")));
    };
    index
        .checked_sub(1)
        .and_then(|i| g.nodes_of_type(t).get(i).copied())
        .ok_or_else(|| Error::contract(format!("type `{}` has no node number {index}", g.node_types()[t].name)))
}

fn enumerate(path: &Path, name: &str, node: Option<&str>, list: bool, out: &mut dyn Write) -> Result<i32> {
    let g = HeteroGraph::from_file(path)?;
    let schema = g
        .metapath(name)
        .ok_or_else(|| Error::contract(format!("graph has no metapath `{name}`")))?
        .clone();
    let one = std::slice::from_ref(&schema);
    match node {
        Some(spec) => {
            let v = resolve_node(&g, spec)?;
            if g.type_of(v) != schema.start_type() {
                return Err(Error::contract(format!(
                    "node {v} is a `{}` but `{name}` starts at `{}`",
                    g.node_types()[g.type_of(v)].name,
                    g.node_types()[schema.start_type()].name
                )));
            }
            writeln!(out, "{}", count_instances(&g, one, v))?;
            if list {
                for inst in enumerate_instances(&g, &schema, v)? {
                    let ids: Vec<String> = inst.nodes.iter().map(|n| n.to_string()).collect();
                    writeln!(out, "{}", ids.join(" "))?;
                }
            }
        }
        None => {
            for v in g.nodes_of_type(schema.start_type()) {
                writeln!(out, "{v}\t{}", count_instances(&g, one, v))?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn train(
    graph_path: &Path,
    config_path: &Path,
    dir: &Path,
    no_inner: bool,
    no_outer: bool,
    out: &mut dyn Write,
) -> Result<i32> {
    let g = HeteroGraph::from_file(graph_path)?;
    let mut config = ModelConfig::from_file(config_path)?;
    if no_inner {
        config.inner_order_mode = InnerOrderMode::Random;
    }
    if no_outer {
        config.outer_order_mode = OuterOrderMode::Random;
    }
    let mut manifest = RunManifest::new(&config);
    manifest.add_input("graph", graph_path)?;
    manifest.add_input("config", config_path)?;
    std::fs::create_dir_all(dir)?;

    let mut trainer = Trainer::new(&g, &config)?;
    let mut log = Ok(());
    while trainer.epoch < config.num_epochs {
        let rec = trainer.step()?;
        manifest.push_epoch(&rec);
        manifest.write(dir)?;
        if log.is_ok() {
            log = writeln!(
                out,
                "epoch {:>4}  train_loss {:.6}  val_acc {:.4}  val_macro_f1 {:.4}",
                rec.epoch, rec.train_loss, rec.val.accuracy, rec.val.macro_f1
            );
        }
    }
    log?;
    trainer.checkpoint().save(dir.join("checkpoint.bin"))?;
    trainer.best_checkpoint().save(dir.join("best.bin"))?;
    let test = trainer.evaluate_best(&g.splits().test)?;
    manifest.best_epoch = Some(trainer.best_epoch);
    manifest.test = Some(test.into());
    manifest.write(dir)?;
    writeln!(
        out,
        "best epoch {}  test_acc {:.4}  test_micro_f1 {:.4}  test_macro_f1 {:.4}",
        trainer.best_epoch, test.accuracy, test.micro_f1, test.macro_f1
    )?;
    Ok(EXIT_OK)
}

fn eval(graph_path: &Path, ckpt_path: &Path, out: &mut dyn Write) -> Result<i32> {
    let g = HeteroGraph::from_file(graph_path)?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let model = ckpt.restore_model(&g)?;
    let logits = model.logits(&crate::model::Prepared::new(&g, &model.config)?)?;
    let s = g.splits();
    for (name, nodes) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        if nodes.is_empty() {
            continue;
        }
        let m = crate::model::loss_and_metrics(&logits, g.labels(), nodes)?;
        writeln!(
            out,
            "{name:<5}  loss {:.6}  acc {:.4}  micro_f1 {:.4}  macro_f1 {:.4}",
            m.loss, m.accuracy, m.micro_f1, m.macro_f1
        )?;
    }
    Ok(EXIT_OK)
}

fn gradcheck(
    graph_path: &Path,
    config_path: &Path,
    epsilon: f64,
    samples: usize,
    gain: f64,
    weights_seed: u64,
    out: &mut dyn Write,
) -> Result<i32> {
    let g = HeteroGraph::from_file(graph_path)?;
    let config = ModelConfig::from_file(config_path)?;
    let mut model = HgmnModel::new(&g, &config)?;
    if gain > 0.0 {
        model.randomize_weights(weights_seed, gain);
    }
    let report = gradient_check(&model, &g, epsilon, samples)?;
    for r in &report.groups {
        let mark = if r.max_rel_err <= GRADCHECK_TOL { "ok" } else { "FAIL" };
        writeln!(out, "{mark:<4}  {:<40}  {:>3} coords  max rel err {:.3e}", r.name, r.coordinates, r.max_rel_err)?;
    }
    let worst = report.max_rel_err();
    writeln!(out, "worst {worst:.3e} (tolerance {GRADCHECK_TOL:e}, epsilon {epsilon:e})")?;
    Ok(if worst <= GRADCHECK_TOL { EXIT_OK } else { EXIT_NUMERIC })
}

fn run_selftest(out: &mut dyn Write) -> Result<i32> {
    let duality = selftest::scan_duality(100, 0)?;
    let zoh = selftest::zoh_checks()?;
    let reduction = selftest::selective_reduces_to_lti(10, 0)?;
    let lines = [
        ("scan-duality max error", duality, selftest::DUALITY_TOL),
        ("zoh scalar A-bar error", zoh.scalar_a, selftest::ZOH_TOL),
        ("zoh scalar B-bar error", zoh.scalar_b, selftest::ZOH_TOL),
        ("zoh small-step A-bar error", zoh.small_step_a, selftest::LIMIT_TOL),
        ("zoh small-step B-bar error", zoh.small_step_b, selftest::ZOH_TOL),
        ("zoh limit vs series error", zoh.limit_vs_series, selftest::SERIES_TOL),
        ("selective-to-LTI max error", reduction, selftest::REDUCTION_TOL),
    ];
    let mut ok = true;
    for (name, v, tol) in lines {
        let pass = v <= tol;
        ok &= pass;
        writeln!(out, "{} {name} {v:.3e} (<= {tol:e})", if pass { "ok  " } else { "FAIL" })?;
    }
    Ok(if ok { EXIT_OK } else { EXIT_NUMERIC })
}
