//! Full-batch training, checkpoints and the model-level gradient check.

use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;

use crate::autodiff::{ParamSet, Tape};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::gradcheck::{check_gradients, GroupReport};
use crate::hetgraph::{HeteroGraph, NodeId};
use crate::init::ModelRng;
use crate::model::{cross_entropy, loss_and_metrics, HgmnModel, Metrics, Prepared};
use crate::optim::{adam_step, AdamState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
}

/// Everything needed to continue or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub adam: AdamState,
    pub rng: ModelRng,
    /// Completed epochs.
    pub epoch: usize,
    pub best_metric: f64,
    pub best_epoch: usize,
}

const MAGIC: &[u8; 8] = b"HGMNCKPT";
const FORMAT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn floats(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {n}")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Checkpoint {
    /// Little-endian container: magic, version, config text, named
    /// parameters with shapes, Adam moments, generator state, counters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.bytes(self.config.to_text().as_bytes());
        w.u64(self.params.len() as u64);
        for (_, name, t) in self.params.iter() {
            w.bytes(name.as_bytes());
            w.u64(t.shape().len() as u64);
            t.shape().iter().for_each(|&d| w.u64(d as u64));
            w.floats(t.data());
        }
        let a = &self.adam;
        for v in [a.learning_rate, a.weight_decay, a.beta1, a.beta2, a.eps] {
            w.f64(v);
        }
        w.u64(a.step);
        for moments in [&a.first_moment, &a.second_moment] {
            w.u64(moments.len() as u64);
            moments.iter().for_each(|m| w.floats(m));
        }
        w.0.extend_from_slice(&self.rng.get_seed());
        w.u64(self.rng.get_stream());
        w.0.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        w.u64(self.epoch as u64);
        w.f64(self.best_metric);
        w.u64(self.best_epoch as u64);
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let config = ModelConfig::parse(&r.string()?)?;
        let mut params = ParamSet::new();
        let n = r.len()?;
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let data = r.floats()?;
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("parameter `{name}`: {e}")))?;
            params.add(name, t);
        }
        let (lr, wd, b1, b2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let step = r.u64()?;
        let mut moments = Vec::new();
        for _ in 0..2 {
            let k = r.len()?;
            moments.push((0..k).map(|_| r.floats()).collect::<Result<Vec<_>>>()?);
        }
        let second_moment = moments.pop().expect("two moment lists");
        let first_moment = moments.pop().expect("two moment lists");
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let mut rng = ModelRng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        let epoch = r.len()?;
        let best_metric = r.f64()?;
        let best_epoch = r.len()?;
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self {
            config,
            params,
            adam: AdamState {
                learning_rate: lr,
                weight_decay: wd,
                beta1: b1,
                beta2: b2,
                eps,
                step,
                first_moment,
                second_moment,
            },
            rng,
            epoch,
            best_metric,
            best_epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rebuilds the model for `g` and installs the stored parameter values.
    pub fn restore_model(&self, g: &HeteroGraph) -> Result<HgmnModel> {
        let mut model = HgmnModel::new(g, &self.config)?;
        model.check_graph(g)?;
        if model.params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model for this graph has {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for (id, name, t) in self.params.iter() {
            if model.params.name(id) != name || model.params.get(id).shape() != t.shape() {
                return Err(Error::Checkpoint(format!("parameter `{name}` does not fit this graph's model")));
            }
            model.params.get_mut(id).data_mut().copy_from_slice(t.data());
        }
        model.rng = self.rng.clone();
        Ok(model)
    }
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Io(std::io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn labels_of(g: &HeteroGraph, nodes: &[NodeId], split: &str) -> Result<Vec<usize>> {
    nodes
        .iter()
        .map(|&v| g.label(v).ok_or_else(|| Error::contract(format!("{split} node {v} has no label"))))
        .collect()
}

/// Training state over one graph.
pub struct Trainer<'g> {
    pub graph: &'g HeteroGraph,
    pub model: HgmnModel,
    pub prepared: Prepared,
    pub adam: AdamState,
    pub epoch: usize,
    pub best_metric: f64,
    pub best_epoch: usize,
    /// Parameters of the best validation epoch so far.
    pub best_params: ParamSet,
    train_labels: Vec<usize>,
}

impl<'g> Trainer<'g> {
    pub fn new(g: &'g HeteroGraph, config: &ModelConfig) -> Result<Self> {
        let model = HgmnModel::new(g, config)?;
        let adam = AdamState::new(&model.params, config.learning_rate, config.weight_decay);
        Self::assemble(g, model, adam, 0, f64::NEG_INFINITY, 0, None)
    }

    /// Continues from `last`; `best` (if given) restores the best-so-far parameters.
    pub fn resume(g: &'g HeteroGraph, last: &Checkpoint, best: Option<&Checkpoint>) -> Result<Self> {
        let model = last.restore_model(g)?;
        let best_params = best.map(|b| b.params.clone());
        Self::assemble(g, model, last.adam.clone(), last.epoch, last.best_metric, last.best_epoch, best_params)
    }

    fn assemble(
        g: &'g HeteroGraph,
        model: HgmnModel,
        adam: AdamState,
        epoch: usize,
        best_metric: f64,
        best_epoch: usize,
        best_params: Option<ParamSet>,
    ) -> Result<Self> {
        let splits = g.splits();
        if splits.train.is_empty() || splits.val.is_empty() {
            return Err(Error::contract("training needs non-empty train and val splits"));
        }
        let train_labels = labels_of(g, &splits.train, "train")?;
        labels_of(g, &splits.val, "val")?;
        let prepared = Prepared::new(g, &model.config)?;
        Ok(Self {
            graph: g,
            best_params: best_params.unwrap_or_else(|| model.params.clone()),
            model,
            prepared,
            adam,
            epoch,
            best_metric,
            best_epoch,
            train_labels,
        })
    }

    /// One full-graph gradient step followed by validation.
    pub fn step(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch + 1;
        let g = self.graph;
        let mut tape = Tape::new();
        let forward = self
            .model
            .forward(&mut tape, &self.model.params, &self.prepared)
            .and_then(|logits| cross_entropy(&mut tape, logits, &g.splits().train, &self.train_labels));
        let loss = match forward {
            Ok(v) => v,
            Err(e) if e.is_numeric() => return Err(self.diagnose(epoch, e)),
            Err(e) => return Err(e),
        };
        let train_loss = tape.value(loss).item()?;
        tape.backward(loss)?.accumulate(&mut self.model.params);
        drop(tape);
        if let Some((name, _)) = worst_gradient(&self.model.params).filter(|(_, n)| !n.is_finite()) {
            return Err(Error::non_finite(format!("epoch {epoch}: gradient of `{name}` is not finite")));
        }
        adam_step(&mut self.model.params, &mut self.adam)?;
        let val = self.evaluate(&g.splits().val).map_err(|e| if e.is_numeric() { self.diagnose(epoch, e) } else { e })?;
        self.epoch = epoch;
        if val.macro_f1 > self.best_metric {
            self.best_metric = val.macro_f1;
            self.best_epoch = epoch;
            self.best_params = self.model.params.clone();
        }
        Ok(EpochRecord { epoch, train_loss, val })
    }

    fn diagnose(&self, epoch: usize, e: Error) -> Error {
        let worst = worst_gradient(&self.model.params)
            .map(|(n, v)| format!("; largest gradient norm {v:.3e} on `{n}`"))
            .unwrap_or_default();
        Error::non_finite(format!("epoch {epoch}: {e}{worst}"))
    }

    /// Metrics of the current parameters on `nodes`.
    pub fn evaluate(&self, nodes: &[NodeId]) -> Result<Metrics> {
        let logits = self.model.logits(&self.prepared)?;
        loss_and_metrics(&logits, self.graph.labels(), nodes)
    }

    /// Metrics of the best-validation parameters on `nodes`.
    pub fn evaluate_best(&self, nodes: &[NodeId]) -> Result<Metrics> {
        let mut tape = Tape::new();
        let logits = self.model.forward(&mut tape, &self.best_params, &self.prepared)?;
        loss_and_metrics(tape.value(logits), self.graph.labels(), nodes)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config.clone(),
            params: self.model.params.clone(),
            adam: self.adam.clone(),
            rng: self.model.rng.clone(),
            epoch: self.epoch,
            best_metric: self.best_metric,
            best_epoch: self.best_epoch,
        }
    }

    pub fn best_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.best_params.clone(),
            ..self.checkpoint()
        }
    }

    /// Runs the remaining epochs of the configured budget.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<Vec<EpochRecord>> {
        let mut history = Vec::new();
        while self.epoch < self.model.config.num_epochs {
            let rec = self.step()?;
            on_epoch(&rec);
            history.push(rec);
        }
        Ok(history)
    }
}

/// Parameter with the largest gradient L2 norm.
fn worst_gradient(params: &ParamSet) -> Option<(String, f64)> {
    params
        .iter()
        .filter_map(|(_, name, t)| {
            let g = t.grad.as_ref()?;
            let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            Some((name.to_string(), if n.is_nan() { f64::INFINITY } else { n }))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub epsilon: f64,
    pub groups: Vec<GroupReport>,
}

impl GradientReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }
}

/// Finite-difference check of the training loss against the tape, with up
/// to `samples` seeded coordinates per parameter tensor.
pub fn gradient_check(model: &HgmnModel, g: &HeteroGraph, epsilon: f64, samples: usize) -> Result<GradientReport> {
    let prep = Prepared::new(g, &model.config)?;
    let train = &g.splits().train;
    if train.is_empty() {
        return Err(Error::contract("gradient check needs a non-empty train split"));
    }
    let labels = labels_of(g, train, "train")?;
    let groups = check_gradients(
        &model.params,
        |tape, params| {
            let logits = model.forward(tape, params, &prep)?;
            cross_entropy(tape, logits, train, &labels)
        },
        epsilon,
        samples,
        model.config.seed,
    )?;
    Ok(GradientReport { epsilon, groups })
}
