//! Training regimes: teacher forcing, no-algorithm with sampled trajectories,
//! processor transfer and multi-task learning, all driven by one
//! early-stopping Adam loop.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diff::{Adam, AdamConfig, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::executor::{init_params, Arch, Bound, Budget, ExecutorParams, GraphContext, ModelConfig, NaExample, Selection};
use crate::graphgen::stream_seed;
use crate::scalar::Scalar;
use crate::trace::{Algorithm, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    Tf,
    Na,
    TransferFreeze,
    TransferFinetune,
    Transfer2Proc,
    Multitask,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Tf,
        Regime::Na,
        Regime::TransferFreeze,
        Regime::TransferFinetune,
        Regime::Transfer2Proc,
        Regime::Multitask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Tf => "tf",
            Regime::Na => "na",
            Regime::TransferFreeze => "transfer-freeze",
            Regime::TransferFinetune => "transfer-finetune",
            Regime::Transfer2Proc => "transfer-2proc",
            Regime::Multitask => "multitask",
        }
    }

    pub fn needs_base(self) -> bool {
        !matches!(self, Regime::Tf | Regime::Na)
    }

    pub fn transfer_mode(self) -> Option<TransferMode> {
        match self {
            Regime::TransferFreeze => Some(TransferMode::Freeze),
            Regime::TransferFinetune => Some(TransferMode::Finetune),
            Regime::Transfer2Proc => Some(TransferMode::TwoProcessors),
            _ => None,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace('_', "-");
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == lower)
            .ok_or_else(|| Error::arg(format!("unknown regime '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryAggregate {
    /// Back-propagate through the lowest-loss trajectory.
    Best,
    /// Back-propagate through the mean of all trajectory losses.
    Mean,
}

impl FromStr for TrajectoryAggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "best" => Ok(TrajectoryAggregate::Best),
            "mean" => Ok(TrajectoryAggregate::Mean),
            _ => Err(Error::arg(format!("unknown trajectory aggregate '{s}'"))),
        }
    }
}

impl fmt::Display for TrajectoryAggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrajectoryAggregate::Best => "best",
            TrajectoryAggregate::Mean => "mean",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeConfig {
    pub regime: Regime,
    pub base: Option<Algorithm>,
    pub target: Algorithm,
    pub lr: f64,
    pub batch: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub trajectories: usize,
    pub aggregate: TrajectoryAggregate,
    pub temperature: f64,
    /// Adds BCE of next-node scores against the sampled one-hot in NA training.
    pub selection_bce: bool,
    /// Include the base task's TF loss in multi-task training.
    pub base_loss: bool,
    pub val_fraction: f64,
    pub seed: u64,
}

impl RegimeConfig {
    pub fn new(regime: Regime, target: Algorithm) -> Self {
        RegimeConfig {
            regime,
            base: None,
            target,
            lr: 0.0005,
            batch: 64,
            patience: 10,
            max_epochs: 200,
            trajectories: 10,
            aggregate: TrajectoryAggregate::Best,
            temperature: 1.0,
            selection_bce: false,
            base_loss: true,
            val_fraction: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regime.needs_base() && self.base.is_none() {
            return Err(Error::arg(format!("regime {} needs a base algorithm", self.regime)));
        }
        if let Some(b) = self.base {
            if self.regime.needs_base() && b.framework() != self.target.framework() {
                return Err(Error::arg(format!("base {b} and target {} use different frameworks", self.target)));
            }
        }
        if self.batch == 0 || self.trajectories == 0 || self.max_epochs == 0 {
            return Err(Error::arg("batch, trajectories and max_epochs must be positive"));
        }
        if !(self.lr > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::arg("lr and temperature must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::arg("val_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Loss curves of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Last epoch that ran (0-based).
    pub stopped_epoch: usize,
}

/// A differentiable training objective over indexed items.
pub trait Objective<S: Scalar>: Sync {
    fn train_len(&self) -> usize;
    fn val_len(&self) -> usize;
    /// Loss and gradient (store order) of training item `item` in `epoch`.
    fn train_item(&self, params: &ExecutorParams<S>, item: usize, epoch: usize) -> Result<(S, Vec<Tensor<S>>)>;
    fn val_item(&self, params: &ExecutorParams<S>, item: usize) -> Result<S>;
}

/// Optimiser settings of [`fit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub lr: f64,
    pub batch: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl From<&RegimeConfig> for FitConfig {
    fn from(c: &RegimeConfig) -> Self {
        FitConfig { lr: c.lr, batch: c.batch, patience: c.patience, max_epochs: c.max_epochs, seed: c.seed }
    }
}

fn mean_loss<S: Scalar>(losses: &[S]) -> f64 {
    losses.iter().map(|l| l.as_f64()).sum::<f64>() / losses.len().max(1) as f64
}

/// Adam with early stopping on the validation loss. Leaves the parameters of
/// the best validation epoch in `params`. Batches are shuffled per epoch,
/// items run in parallel and gradients are reduced in a fixed order.
pub fn fit<S: Scalar, O: Objective<S>>(params: &mut ExecutorParams<S>, objective: &O, cfg: &FitConfig) -> Result<TrainReport> {
    let n_train = objective.train_len();
    if n_train == 0 {
        return Err(Error::arg("empty training set"));
    }
    if cfg.batch == 0 || cfg.max_epochs == 0 {
        return Err(Error::arg("batch and max_epochs must be positive"));
    }
    let trainable = params.store.trainable().to_vec();
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, params.store.tensors());
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_epoch: 0,
    };
    let mut best_store = params.store.clone();
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, epoch as u64)));
        let mut epoch_losses = Vec::with_capacity(n_train);
        for batch in order.chunks(cfg.batch) {
            let current: &ExecutorParams<S> = params;
            let results: Vec<Result<(S, Vec<Tensor<S>>)>> =
                batch.par_iter().map(|&i| objective.train_item(current, i, epoch)).collect();
            let mut grads: Vec<Tensor<S>> = params.store.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
            for r in results {
                let (loss, g) = r?;
                epoch_losses.push(loss);
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    for (a, &b) in acc.data_mut().iter_mut().zip(gi.data()) {
                        *a += b;
                    }
                }
            }
            let scale = S::one() / S::lit(batch.len() as f64);
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            adam.step(params.store.tensors_mut(), &grads, &trainable)?;
        }
        let train = mean_loss(&epoch_losses);
        let val = if objective.val_len() == 0 {
            train
        } else {
            let current: &ExecutorParams<S> = params;
            let losses: Vec<Result<S>> = (0..objective.val_len()).into_par_iter().map(|i| objective.val_item(current, i)).collect();
            mean_loss(&losses.into_iter().collect::<Result<Vec<_>>>()?)
        };
        report.train_loss.push(train);
        report.val_loss.push(val);
        report.stopped_epoch = epoch;
        if val < report.best_val_loss {
            report.best_val_loss = val;
            report.best_epoch = epoch;
            best_store = params.store.clone();
        }
        if epoch - report.best_epoch >= cfg.patience {
            break;
        }
    }
    params.store = best_store;
    Ok(report)
}

/// First `len - round(len * fraction)` items train, the rest validate.
pub fn split_len(len: usize, val_fraction: f64) -> usize {
    let val = ((len as f64) * val_fraction).round() as usize;
    len - val.min(len.saturating_sub(1))
}

fn gradients_of<S: Scalar>(tape: &Tape<S>, bound: &Bound<'_, S>, loss: Var) -> Result<Vec<Tensor<S>>> {
    let grads = tape.backward(loss)?;
    Ok(bound.parameter_gradients(&grads))
}

/// Teacher-forced loss over traces of one task.
pub struct TfObjective<'a, S> {
    pub task: usize,
    pub train: &'a [Trace<S>],
    pub val: &'a [Trace<S>],
}

impl<S: Scalar> TfObjective<'_, S> {
    fn loss(&self, params: &ExecutorParams<S>, trace: &Trace<S>, grad: bool) -> Result<(S, Vec<Tensor<S>>)> {
        let ctx = GraphContext::new(&trace.graph);
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, params, &ctx);
        let (loss, _) = bound.teacher_forced(&mut tape, self.task, trace)?;
        let grads = if grad { gradients_of(&tape, &bound, loss)? } else { Vec::new() };
        Ok((tape.scalar_value(loss), grads))
    }
}

impl<S: Scalar> Objective<S> for TfObjective<'_, S> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn val_len(&self) -> usize {
        self.val.len()
    }

    fn train_item(&self, params: &ExecutorParams<S>, item: usize, _epoch: usize) -> Result<(S, Vec<Tensor<S>>)> {
        self.loss(params, &self.train[item], true)
    }

    fn val_item(&self, params: &ExecutorParams<S>, item: usize) -> Result<S> {
        Ok(self.loss(params, &self.val[item], false)?.0)
    }
}

/// Final-output loss of free rollouts with sampled next-node choices.
pub struct NaObjective<'a, S> {
    pub task: usize,
    pub train: &'a [NaExample<S>],
    pub val: &'a [NaExample<S>],
    pub trajectories: usize,
    pub aggregate: TrajectoryAggregate,
    pub temperature: S,
    pub selection_bce: bool,
    pub seed: u64,
}

/// One sampled rollout. `value` is the final-output loss, which ranks
/// trajectories and is reported; `train` is the loss that gets differentiated.
struct Trajectory<'p, S> {
    tape: Tape<S>,
    bound: Bound<'p, S>,
    value: S,
    train: Var,
}

/// Noise stream of trajectory `k` for `item` in `epoch`. Streams for
/// `k < K` do not depend on `K`, so draws are nested across trajectory counts.
pub fn trajectory_rng(seed: u64, epoch: usize, item: usize, k: usize) -> ChaCha8Rng {
    let s = stream_seed(stream_seed(stream_seed(seed, epoch as u64), item as u64), k as u64);
    ChaCha8Rng::seed_from_u64(s)
}

impl<S: Scalar> NaObjective<'_, S> {
    fn trajectory<'p>(
        &self,
        params: &'p ExecutorParams<S>,
        ctx: &'p GraphContext<S>,
        ex: &NaExample<S>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Trajectory<'p, S>> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, params, ctx);
        let selection = match rng {
            Some(rng) => Selection::Gumbel { temperature: self.temperature, rng },
            None => Selection::Argmax,
        };
        let run = bound.free(&mut tape, self.task, ex.algo, &ex.graph, Budget::Given(ex.termination), selection)?;
        let output = bound.final_output_loss(&mut tape, &run, ex)?;
        let mut train = output;
        if self.selection_bce {
            if let Some(sel) = bound.selection_loss(&mut tape, &run)? {
                train = tape.add_all(&[output, sel])?;
            }
        }
        let value = tape.scalar_value(output);
        Ok(Trajectory { tape, bound, value, train })
    }

    /// Final-output loss of each sampled trajectory of training item `item`.
    pub fn trajectory_losses(&self, params: &ExecutorParams<S>, item: usize, epoch: usize) -> Result<Vec<S>> {
        let ex = &self.train[item];
        let ctx = GraphContext::new(&ex.graph);
        (0..self.trajectories)
            .map(|k| {
                let mut rng = trajectory_rng(self.seed, epoch, item, k);
                Ok(self.trajectory(params, &ctx, ex, Some(&mut rng))?.value)
            })
            .collect()
    }
}

impl<S: Scalar> Objective<S> for NaObjective<'_, S> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn val_len(&self) -> usize {
        self.val.len()
    }

    fn train_item(&self, params: &ExecutorParams<S>, item: usize, epoch: usize) -> Result<(S, Vec<Tensor<S>>)> {
        let ex = &self.train[item];
        let ctx = GraphContext::new(&ex.graph);
        match self.aggregate {
            TrajectoryAggregate::Best => {
                let mut best: Option<Trajectory<'_, S>> = None;
                for k in 0..self.trajectories {
                    let mut rng = trajectory_rng(self.seed, epoch, item, k);
                    let t = self.trajectory(params, &ctx, ex, Some(&mut rng))?;
                    if best.as_ref().map_or(true, |b| t.value < b.value) {
                        best = Some(t);
                    }
                }
                let t = best.expect("at least one trajectory");
                Ok((t.value, gradients_of(&t.tape, &t.bound, t.train)?))
            }
            TrajectoryAggregate::Mean => {
                let w = S::one() / S::lit(self.trajectories as f64);
                let mut total = S::zero();
                let mut acc: Vec<Tensor<S>> = params.store.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
                for k in 0..self.trajectories {
                    let mut rng = trajectory_rng(self.seed, epoch, item, k);
                    let t = self.trajectory(params, &ctx, ex, Some(&mut rng))?;
                    total += t.value * w;
                    for (a, g) in acc.iter_mut().zip(gradients_of(&t.tape, &t.bound, t.train)?) {
                        for (x, &y) in a.data_mut().iter_mut().zip(g.data()) {
                            *x += y * w;
                        }
                    }
                }
                Ok((total, acc))
            }
        }
    }

    fn val_item(&self, params: &ExecutorParams<S>, item: usize) -> Result<S> {
        let ex = &self.val[item];
        let ctx = GraphContext::new(&ex.graph);
        Ok(self.trajectory(params, &ctx, ex, None)?.value)
    }
}

/// Base-task TF loss plus target-task NA loss on the same parameters.
pub struct MultitaskObjective<'a, S> {
    pub base: TfObjective<'a, S>,
    pub target: NaObjective<'a, S>,
    pub include_base: bool,
}

impl<S: Scalar> Objective<S> for MultitaskObjective<'_, S> {
    fn train_len(&self) -> usize {
        self.target.train_len()
    }

    fn val_len(&self) -> usize {
        self.target.val_len()
    }

    fn train_item(&self, params: &ExecutorParams<S>, item: usize, epoch: usize) -> Result<(S, Vec<Tensor<S>>)> {
        let (mut loss, mut grads) = self.target.train_item(params, item, epoch)?;
        if self.include_base && self.base.train_len() > 0 {
            let (bl, bg) = self.base.train_item(params, item % self.base.train_len(), epoch)?;
            loss += bl;
            for (a, g) in grads.iter_mut().zip(&bg) {
                for (x, &y) in a.data_mut().iter_mut().zip(g.data()) {
                    *x += y;
                }
            }
        }
        Ok((loss, grads))
    }

    /// Early stopping follows the target task alone.
    fn val_item(&self, params: &ExecutorParams<S>, item: usize) -> Result<S> {
        self.target.val_item(params, item)
    }
}

fn split<T>(items: &[T], val_fraction: f64) -> (&[T], &[T]) {
    items.split_at(split_len(items.len(), val_fraction))
}

fn na_objective<'a, S: Scalar>(task: usize, examples: &'a [NaExample<S>], cfg: &RegimeConfig) -> NaObjective<'a, S> {
    let (train, val) = split(examples, cfg.val_fraction);
    NaObjective {
        task,
        train,
        val,
        trajectories: cfg.trajectories,
        aggregate: cfg.aggregate,
        temperature: S::lit(cfg.temperature),
        selection_bce: cfg.selection_bce,
        seed: cfg.seed,
    }
}

fn check_algo(items: impl Iterator<Item = Algorithm>, algo: Algorithm) -> Result<()> {
    for a in items {
        if a != algo {
            return Err(Error::arg(format!("expected data for {algo}, found {a}")));
        }
    }
    Ok(())
}

/// Teacher-forced training of `task` on full traces.
pub fn train_tf<S: Scalar>(params: &mut ExecutorParams<S>, task: Algorithm, traces: &[Trace<S>], cfg: &RegimeConfig) -> Result<TrainReport> {
    cfg.validate()?;
    check_algo(traces.iter().map(|t| t.algo), task)?;
    let (train, val) = split(traces, cfg.val_fraction);
    let objective = TfObjective { task: params.task_index(task)?, train, val };
    fit(params, &objective, &FitConfig::from(cfg))
}

/// No-algorithm training of `task` from final outputs and step counts only.
pub fn train_na<S: Scalar>(params: &mut ExecutorParams<S>, task: Algorithm, examples: &[NaExample<S>], cfg: &RegimeConfig) -> Result<TrainReport> {
    cfg.validate()?;
    check_algo(examples.iter().map(|e| e.algo), task)?;
    if examples.iter().any(|e| e.termination == 0) {
        return Err(Error::arg("no-algorithm examples need a positive step count"));
    }
    let objective = na_objective(params.task_index(task)?, examples, cfg);
    fit(params, &objective, &FitConfig::from(cfg))
}

/// Joint training: TF on the base task's traces plus NA on the target's final
/// outputs, summed per optimiser step.
pub fn train_multitask<S: Scalar>(
    params: &mut ExecutorParams<S>,
    base: Algorithm,
    base_traces: &[Trace<S>],
    target: Algorithm,
    target_examples: &[NaExample<S>],
    cfg: &RegimeConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_algo(base_traces.iter().map(|t| t.algo), base)?;
    check_algo(target_examples.iter().map(|e| e.algo), target)?;
    let (train, val) = split(base_traces, cfg.val_fraction);
    let objective = MultitaskObjective {
        base: TfObjective { task: params.task_index(base)?, train, val },
        target: na_objective(params.task_index(target)?, target_examples, cfg),
        include_base: cfg.base_loss,
    };
    fit(params, &objective, &FitConfig::from(cfg))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferMode {
    Freeze,
    Finetune,
    TwoProcessors,
}

/// Builds a single-task model for `target` that reuses the pretrained
/// processor. Encoders, decoders and termination heads are fresh.
pub fn apply_transfer<S: Scalar>(
    pretrained: &ExecutorParams<S>,
    mode: TransferMode,
    target: Algorithm,
    arch: Arch,
    seed: u64,
) -> Result<ExecutorParams<S>> {
    if pretrained.config.arch != arch {
        return Err(Error::arg(format!(
            "pretrained {} processor cannot seed a {arch} model",
            pretrained.config.arch
        )));
    }
    if pretrained.config.processors != 1 {
        return Err(Error::arg("transfer expects a single pretrained processor"));
    }
    let config = ModelConfig {
        arch,
        hidden: pretrained.config.hidden,
        tasks: vec![target],
        processors: if mode == TransferMode::TwoProcessors { 2 } else { 1 },
    };
    let mut params = init_params::<S>(&config, seed)?;
    for id in params.processor_params(0) {
        let name = params.store.names()[id.0].clone();
        let src = pretrained.store.id_of(&name).ok_or_else(|| Error::state(format!("pretrained model lacks {name}")))?;
        params.store.tensors_mut()[id.0] = pretrained.store.get(src).clone();
        params.store.set_trainable(id, mode == TransferMode::Finetune);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::ModelConfig;

    /// Quadratic bowl on the first tensor; validation loss is scripted.
    struct Scripted {
        val: Vec<f64>,
        epoch_seen: std::sync::Mutex<usize>,
    }

    impl Objective<f64> for Scripted {
        fn train_len(&self) -> usize {
            3
        }
        fn val_len(&self) -> usize {
            1
        }
        fn train_item(&self, params: &ExecutorParams<f64>, _item: usize, epoch: usize) -> Result<(f64, Vec<Tensor<f64>>)> {
            *self.epoch_seen.lock().unwrap() = epoch;
            let grads = params
                .store
                .tensors()
                .iter()
                .enumerate()
                .map(|(i, t)| if i == 0 { t.map(|x| 2.0 * x) } else { Tensor::zeros(t.shape().to_vec()) })
                .collect();
            Ok((params.store.tensors()[0].data().iter().map(|x| x * x).sum(), grads))
        }
        fn val_item(&self, _params: &ExecutorParams<f64>, _item: usize) -> Result<f64> {
            let e = *self.epoch_seen.lock().unwrap();
            Ok(self.val[e.min(self.val.len() - 1)])
        }
    }

    fn params() -> ExecutorParams<f64> {
        init_params(&ModelConfig::new(Arch::Ne, vec![Algorithm::Dijkstra]), 0).unwrap()
    }

    #[test]
    fn early_stopping_halts_patience_epochs_after_best() {
        let mut p = params();
        let obj = Scripted { val: vec![5.0, 4.0, 3.0, 3.5, 3.2, 3.1, 3.0, 4.0, 9.0, 9.0], epoch_seen: 0.into() };
        let cfg = FitConfig { lr: 0.01, batch: 2, patience: 4, max_epochs: 100, seed: 1 };
        let r = fit(&mut p, &obj, &cfg).unwrap();
        assert_eq!(r.best_epoch, 2);
        assert_eq!(r.stopped_epoch, 6);
        assert_eq!(r.best_val_loss, 3.0);
        assert_eq!(r.val_loss.len(), 7);
    }

    #[test]
    fn fit_restores_best_parameters() {
        let mut p = params();
        let obj = Scripted { val: vec![1.0, 2.0, 3.0], epoch_seen: 0.into() };
        let cfg = FitConfig { lr: 0.01, batch: 3, patience: 2, max_epochs: 100, seed: 1 };
        let mut after_first = params();
        fit(&mut after_first, &Scripted { val: vec![1.0], epoch_seen: 0.into() }, &FitConfig { max_epochs: 1, ..cfg }).unwrap();
        fit(&mut p, &obj, &cfg).unwrap();
        assert_eq!(p, after_first);
    }

    #[test]
    fn split_by_index() {
        assert_eq!(split_len(100, 0.1), 90);
        assert_eq!(split_len(1, 0.1), 1);
        assert_eq!(split_len(5, 0.5), 2);
        assert_eq!(split_len(2, 0.9), 1);
    }

    #[test]
    fn regime_names_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        let mut cfg = RegimeConfig::new(Regime::Multitask, Algorithm::Dijkstra);
        assert!(cfg.validate().is_err());
        cfg.base = Some(Algorithm::Bfs);
        assert!(cfg.validate().is_err());
        cfg.base = Some(Algorithm::Prim);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn transfer_copies_and_freezes_processor() {
        let pre = init_params::<f64>(&ModelConfig::new(Arch::NePlusPlus, vec![Algorithm::Prim]), 3).unwrap();
        for mode in [TransferMode::Freeze, TransferMode::Finetune, TransferMode::TwoProcessors] {
            let p = apply_transfer(&pre, mode, Algorithm::Dijkstra, Arch::NePlusPlus, 9).unwrap();
            for id in p.processor_params(0) {
                let name = &p.store.names()[id.0];
                assert_eq!(p.store.get(id), pre.store.get(pre.store.id_of(name).unwrap()));
                assert_eq!(p.store.trainable()[id.0], mode == TransferMode::Finetune);
            }
            assert_eq!(p.processor_params(1).is_empty(), mode != TransferMode::TwoProcessors);
            assert!(p.processor_params(1).iter().all(|id| p.store.trainable()[id.0]));
        }
        assert!(apply_transfer(&pre, TransferMode::Freeze, Algorithm::Dijkstra, Arch::Ne, 9).is_err());
    }
}
