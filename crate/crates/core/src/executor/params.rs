//! Named parameter storage and the layout of NE / NE++ executors.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphgen::stream_seed;
use crate::scalar::Scalar;
use crate::trace::{Algorithm, Framework};

pub const DEFAULT_HIDDEN: usize = 32;
pub const MULTITASK_NEPP_HIDDEN: usize = 16;
/// Raw edge features: `[weight, is_self_loop]`. Models see them through a
/// learned `l`-wide edge embedding.
pub const EDGE_FEATURES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    /// Linear node encoder shared by all tasks, linear max-aggregation processor.
    Ne,
    /// Per-task edge encoders (linear plus 2-layer MLP) feeding a shared processor.
    NePlusPlus,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Ne => "ne",
            Arch::NePlusPlus => "nepp",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ne" => Ok(Arch::Ne),
            "nepp" | "ne++" => Ok(Arch::NePlusPlus),
            _ => Err(Error::arg(format!("unknown architecture '{s}' (expected ne or nepp)"))),
        }
    }
}

/// Width of the per-node input features of a task.
///
/// Sequential: `[key, known, popped]`, where the key is only visible on known
/// nodes (popped or the source). Parallel: `[key, reached]`. BFS: `[reached]`.
pub fn input_width(algo: Algorithm) -> usize {
    match (algo, algo.framework()) {
        (Algorithm::Bfs, _) => 1,
        (_, Framework::Parallel) => 2,
        (_, Framework::Sequential) => 3,
    }
}

/// Width of the decoder output: key (sequential), key and reach logit
/// (parallel), reach logit (BFS).
pub fn decoder_width(algo: Algorithm) -> usize {
    match (algo, algo.framework()) {
        (Algorithm::Bfs, _) => 1,
        (_, Framework::Parallel) => 2,
        (_, Framework::Sequential) => 1,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub arch: Arch,
    pub hidden: usize,
    pub tasks: Vec<Algorithm>,
    /// 1 normally, 2 for the summed frozen + fresh processor pair.
    pub processors: usize,
}

impl ModelConfig {
    /// Default hidden width: 32, or 16 for NE++ with several tasks.
    pub fn new(arch: Arch, tasks: Vec<Algorithm>) -> Self {
        let hidden = if arch == Arch::NePlusPlus && tasks.len() > 1 { MULTITASK_NEPP_HIDDEN } else { DEFAULT_HIDDEN };
        ModelConfig { arch, hidden, tasks, processors: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::arg("a model needs at least one task"));
        }
        if self.hidden == 0 {
            return Err(Error::arg("hidden width must be positive"));
        }
        if !(1..=2).contains(&self.processors) {
            return Err(Error::arg("processors must be 1 or 2"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if self.tasks[..i].contains(t) {
                return Err(Error::arg(format!("task {t} listed twice")));
            }
        }
        Ok(())
    }

    pub fn task_index(&self, algo: Algorithm) -> Result<usize> {
        self.tasks
            .iter()
            .position(|&t| t == algo)
            .ok_or_else(|| Error::arg(format!("model has no head for {algo}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Flat list of named tensors with per-tensor trainable flags.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    trainable: Vec<bool>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), trainable: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.trainable.push(true);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn trainable(&self) -> &[bool] {
        &self.trainable
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.trainable[id.0] = trainable;
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a tape leaf, in store order.
    pub fn bind(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// `sum_i parts[i] * w[i] + b`, one weight matrix per input part.
#[derive(Clone, Debug)]
pub(crate) struct Dense {
    pub(crate) parts: Vec<ParamId>,
    pub(crate) bias: ParamId,
}

/// Linear map over `[sender parts, receiver parts, edge embedding]` for every
/// directed edge, evaluated as node-level products followed by row gathers.
#[derive(Clone, Debug)]
pub(crate) struct EdgeDense {
    pub(crate) sender: Vec<ParamId>,
    pub(crate) receiver: Vec<ParamId>,
    pub(crate) edge: ParamId,
    pub(crate) bias: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) enum Message {
    /// NE: messages from sender/receiver node embeddings and the edge encoding.
    Node(EdgeDense),
    /// NE++: messages from precomputed edge embeddings.
    Edge(Dense),
}

#[derive(Clone, Debug)]
pub(crate) struct Processor {
    pub(crate) message: Message,
    pub(crate) update: Dense,
}

#[derive(Clone, Debug)]
pub(crate) struct NeEncoder {
    /// One weight block per task feature slot.
    pub(crate) slots: Vec<ParamId>,
    pub(crate) hidden: ParamId,
    pub(crate) bias: ParamId,
    pub(crate) edge: Dense,
}

#[derive(Clone, Debug)]
pub(crate) struct EdgeEncoder {
    pub(crate) edge: Dense,
    pub(crate) linear: EdgeDense,
    pub(crate) mlp_in: EdgeDense,
    pub(crate) mlp_out: Dense,
}

#[derive(Clone, Debug)]
pub(crate) struct Termination {
    pub(crate) message: EdgeDense,
    pub(crate) update: Dense,
    pub(crate) readout: Dense,
}

#[derive(Clone, Debug)]
pub(crate) struct TaskHeads {
    pub(crate) edge_encoder: Option<EdgeEncoder>,
    pub(crate) decoder: Dense,
    pub(crate) pred: EdgeDense,
    pub(crate) next: Option<Dense>,
    pub(crate) termination: Termination,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub(crate) ne_encoder: Option<NeEncoder>,
    pub(crate) processors: Vec<Processor>,
    pub(crate) tasks: Vec<TaskHeads>,
}

struct Builder<'a, S> {
    store: &'a mut ParamStore<S>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> Builder<'_, S> {
    fn weight(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let limit = (6.0 / (fan_in + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| S::lit(self.rng.gen_range(-limit..limit))).collect();
        self.store.push(name, Tensor::matrix(rows, cols, data).expect("sized above"))
    }

    fn bias(&mut self, name: String, cols: usize) -> ParamId {
        self.store.push(name, Tensor::zeros(vec![1, cols]))
    }

    fn dense(&mut self, prefix: &str, widths: &[usize], out: usize) -> Dense {
        let fan_in = widths.iter().sum();
        let parts = widths.iter().enumerate().map(|(i, &w)| self.weight(format!("{prefix}.w{i}"), w, out, fan_in)).collect();
        Dense { parts, bias: self.bias(format!("{prefix}.b"), out) }
    }

    fn edge_dense(&mut self, prefix: &str, widths: &[usize], edge_width: usize, out: usize) -> EdgeDense {
        let fan_in = 2 * widths.iter().sum::<usize>() + edge_width;
        let sender = widths.iter().enumerate().map(|(i, &w)| self.weight(format!("{prefix}.sender{i}"), w, out, fan_in)).collect();
        let receiver = widths.iter().enumerate().map(|(i, &w)| self.weight(format!("{prefix}.receiver{i}"), w, out, fan_in)).collect();
        let edge = self.weight(format!("{prefix}.edge"), edge_width, out, fan_in);
        EdgeDense { sender, receiver, edge, bias: self.bias(format!("{prefix}.b"), out) }
    }
}

fn processor_prefix(p: usize) -> String {
    format!("processor{p}")
}

/// Builds the layout and draws every parameter from `seed` (Glorot-uniform
/// weights, zero biases) in a fixed registration order.
pub(crate) fn build<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<(Layout, ParamStore<S>)> {
    config.validate()?;
    let l = config.hidden;
    let mut store = ParamStore::new();
    let mut b = Builder { store: &mut store, rng: ChaCha8Rng::seed_from_u64(stream_seed(seed, 0x5EED)) };

    let ne_encoder = (config.arch == Arch::Ne).then(|| {
        let fan_in = config.tasks.iter().map(|&t| input_width(t)).sum::<usize>() + l;
        let slots = config
            .tasks
            .iter()
            .map(|&t| b.weight(format!("encoder.slot.{t}"), input_width(t), l, fan_in))
            .collect();
        let hidden = b.weight("encoder.hidden".into(), l, l, fan_in);
        let bias = b.bias("encoder.b".into(), l);
        NeEncoder { slots, hidden, bias, edge: b.dense("encoder.edge", &[EDGE_FEATURES], l) }
    });

    let processors = (0..config.processors)
        .map(|p| {
            let prefix = processor_prefix(p);
            match config.arch {
                Arch::Ne => Processor {
                    message: Message::Node(b.edge_dense(&format!("{prefix}.message"), &[l], l, l)),
                    update: b.dense(&format!("{prefix}.update"), &[l, l], l),
                },
                Arch::NePlusPlus => Processor {
                    message: Message::Edge(b.dense(&format!("{prefix}.message"), &[l], l)),
                    update: b.dense(&format!("{prefix}.update"), &[l, l], l),
                },
            }
        })
        .collect();

    let tasks = config
        .tasks
        .iter()
        .map(|&t| {
            let dx = input_width(t);
            let repr: Vec<usize> = match config.arch {
                Arch::Ne => vec![l, l],
                Arch::NePlusPlus => vec![dx, l],
            };
            let edge_encoder = (config.arch == Arch::NePlusPlus).then(|| EdgeEncoder {
                edge: b.dense(&format!("{t}.encoder.edge"), &[EDGE_FEATURES], l),
                linear: b.edge_dense(&format!("{t}.encoder.linear"), &[l, dx], l, l),
                mlp_in: b.edge_dense(&format!("{t}.encoder.mlp_in"), &[l, dx], l, l),
                mlp_out: b.dense(&format!("{t}.encoder.mlp_out"), &[l], l),
            });
            let decoder = b.dense(&format!("{t}.decoder"), &repr, decoder_width(t));
            let pred = b.edge_dense(&format!("{t}.pred"), &repr, l, 1);
            let next = (t.framework() == Framework::Sequential).then(|| b.dense(&format!("{t}.next"), &repr, 1));
            let mut term_update = repr.clone();
            term_update.push(l);
            let termination = Termination {
                message: b.edge_dense(&format!("{t}.termination.message"), &repr, l, l),
                update: b.dense(&format!("{t}.termination.update"), &term_update, l),
                readout: b.dense(&format!("{t}.termination.readout"), &[l], 1),
            };
            TaskHeads { edge_encoder, decoder, pred, next, termination }
        })
        .collect();

    Ok((Layout { ne_encoder, processors, tasks }, store))
}

/// Model configuration, parameter layout and parameter values.
#[derive(Clone, Debug)]
pub struct ExecutorParams<S> {
    pub config: ModelConfig,
    pub(crate) layout: Layout,
    pub store: ParamStore<S>,
}

impl<S: Scalar> PartialEq for ExecutorParams<S> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.store == other.store
    }
}

/// Deterministically initialised parameters.
pub fn init_params<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<ExecutorParams<S>> {
    let (layout, store) = build(config, seed)?;
    Ok(ExecutorParams { config: config.clone(), layout, store })
}

impl<S: Scalar> ExecutorParams<S> {
    /// Whether a parameter belongs to processor `p` (message and update functions).
    pub fn is_processor_param(name: &str, p: usize) -> bool {
        name.starts_with(&format!("{}.", processor_prefix(p)))
    }

    /// Ids of every tensor of processor `p`.
    pub fn processor_params(&self, p: usize) -> Vec<ParamId> {
        (0..self.store.len())
            .filter(|&i| Self::is_processor_param(&self.store.names()[i], p))
            .map(ParamId)
            .collect()
    }

    /// Ids of the encoder tensors only `task` uses: its slot of the shared NE
    /// encoder, or its whole NE++ edge encoder.
    pub fn encoder_params(&self, task: Algorithm) -> Vec<ParamId> {
        let prefix = format!("{task}.encoder.");
        let slot = format!("encoder.slot.{task}");
        (0..self.store.len())
            .filter(|&i| {
                let n = &self.store.names()[i];
                n.starts_with(&prefix) || *n == slot
            })
            .map(ParamId)
            .collect()
    }

    pub fn task_index(&self, algo: Algorithm) -> Result<usize> {
        self.config.task_index(algo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let cfg = ModelConfig::new(Arch::Ne, vec![Algorithm::Dijkstra]);
        let a = init_params::<f64>(&cfg, 7).unwrap();
        let b = init_params::<f64>(&cfg, 7).unwrap();
        let c = init_params::<f64>(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn nepp_two_tasks_has_two_encoders_one_processor() {
        let cfg = ModelConfig::new(Arch::NePlusPlus, vec![Algorithm::Prim, Algorithm::Dijkstra]);
        assert_eq!(cfg.hidden, 16);
        let p = init_params::<f64>(&cfg, 1).unwrap();
        assert_eq!(p.layout.tasks.len(), 2);
        assert!(p.layout.tasks.iter().all(|t| t.edge_encoder.is_some()));
        assert_eq!(p.layout.processors.len(), 1);
        assert!(p.layout.ne_encoder.is_none());
        assert!(!p.encoder_params(Algorithm::Prim).is_empty());
        let prim: Vec<_> = p.encoder_params(Algorithm::Prim);
        let dij: Vec<_> = p.encoder_params(Algorithm::Dijkstra);
        assert!(prim.iter().all(|id| !dij.contains(id)));
    }

    #[test]
    fn ne_two_tasks_single_encoder_over_both_slots() {
        let cfg = ModelConfig::new(Arch::Ne, vec![Algorithm::Prim, Algorithm::Dijkstra]);
        assert_eq!(cfg.hidden, 32);
        let p = init_params::<f64>(&cfg, 1).unwrap();
        let enc = p.layout.ne_encoder.as_ref().unwrap();
        assert_eq!(enc.slots.len(), 2);
        assert!(p.layout.tasks.iter().all(|t| t.edge_encoder.is_none()));
        // Two slots, the hidden block, the bias and the shared edge embedding (weight, bias).
        assert_eq!(p.store.names().iter().filter(|n| n.starts_with("encoder.")).count(), 6);
    }

    #[test]
    fn biases_start_at_zero_and_names_are_unique() {
        let cfg = ModelConfig { processors: 2, ..ModelConfig::new(Arch::NePlusPlus, vec![Algorithm::BellmanFord]) };
        let p = init_params::<f64>(&cfg, 3).unwrap();
        for (name, t) in p.store.names().iter().zip(p.store.tensors()) {
            if name.ends_with(".b") {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            }
        }
        let mut names = p.store.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), p.store.len());
        assert!(!p.processor_params(1).is_empty());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::new(Arch::Ne, vec![]);
        assert!(cfg.validate().is_err());
        cfg.tasks = vec![Algorithm::Bfs, Algorithm::Bfs];
        assert!(cfg.validate().is_err());
        cfg.tasks = vec![Algorithm::Bfs];
        cfg.processors = 3;
        assert!(cfg.validate().is_err());
        assert!("NE++".parse::<Arch>().is_ok());
        assert!("gat".parse::<Arch>().is_err());
    }
}
