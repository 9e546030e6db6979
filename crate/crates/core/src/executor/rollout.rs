//! Teacher-forced and free-running rollouts with their losses.

use std::sync::Arc;

use rand::Rng;

use super::model::{Bound, GraphContext, StepOutput};
use super::params::{input_width, ExecutorParams};
use crate::diff::{gumbel_softmax_sample, sigmoid, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphgen::WeightedGraph;
use crate::scalar::Scalar;
use crate::trace::{initial_state, Algorithm, Framework, NodeState, Trace};

/// Smooth-L1 transition point used for every key loss.
pub const SMOOTH_L1_BETA: f64 = 0.001;

/// Supervision available without intermediate steps: final outputs and the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct NaExample<S> {
    pub graph: WeightedGraph,
    pub algo: Algorithm,
    pub keys: Vec<Option<S>>,
    pub preds: Vec<Option<usize>>,
    pub termination: usize,
}

impl<S: Scalar> NaExample<S> {
    pub fn from_trace(t: &Trace<S>) -> Self {
        let (keys, preds) = t.final_output();
        NaExample { graph: t.graph.clone(), algo: t.algo, keys, preds, termination: t.termination }
    }

    pub fn reachable(&self) -> Vec<bool> {
        self.preds.iter().map(Option::is_some).collect()
    }
}

/// How many steps a free rollout runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Budget {
    /// Exactly this many steps (the step count is given to the network).
    Given(usize),
    /// Until the termination head fires (`sigmoid > 0.5`), at most `cap` steps.
    Learned { cap: usize },
}

/// Next-node choice in free sequential rollouts.
pub enum Selection<'a, S, R> {
    Argmax,
    /// Straight-through Gumbel-softmax sample at the given temperature.
    Gumbel { temperature: S, rng: &'a mut R },
}

/// Model outputs of a rollout, mirroring a [`Trace`].
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutRecord<S> {
    pub algo: Algorithm,
    pub n: usize,
    /// Key per node after each executed step. Sequential free rollouts hold
    /// the written keys (0 on nodes not selected yet); otherwise decoded keys.
    pub keys: Vec<Vec<S>>,
    /// Parallel: predicted reach per step. Sequential: selected-so-far per step.
    pub reached: Vec<Vec<bool>>,
    /// Arg-max predecessor per node after each step.
    pub preds: Vec<Vec<usize>>,
    /// Selected node per step (sequential).
    pub pop_sequence: Vec<usize>,
    pub termination_probs: Vec<S>,
    /// Number of executed steps.
    pub steps: usize,
    /// The step cap was hit before the termination head fired.
    pub truncated: bool,
    /// Final-output loss of every sampled trajectory (no-algorithm training).
    pub trajectory_losses: Vec<S>,
}

impl<S: Scalar> RolloutRecord<S> {
    fn new(algo: Algorithm, n: usize) -> Self {
        RolloutRecord {
            algo,
            n,
            keys: Vec::new(),
            reached: Vec::new(),
            preds: Vec::new(),
            pop_sequence: Vec::new(),
            termination_probs: Vec::new(),
            steps: 0,
            truncated: false,
            trajectory_losses: Vec::new(),
        }
    }

    pub fn final_keys(&self) -> &[S] {
        self.keys.last().map_or(&[], Vec::as_slice)
    }

    pub fn final_preds(&self) -> &[usize] {
        self.preds.last().map_or(&[], Vec::as_slice)
    }

    pub fn final_reached(&self) -> &[bool] {
        self.reached.last().map_or(&[], Vec::as_slice)
    }
}

/// Node features of a ground-truth state.
pub fn features<S: Scalar>(algo: Algorithm, source: usize, state: &[NodeState<S>]) -> Tensor<S> {
    let w = input_width(algo);
    let mut data = Vec::with_capacity(state.len() * w);
    for (v, s) in state.iter().enumerate() {
        let reached = s.pred.is_some();
        let key = s.key.unwrap_or(S::zero());
        match (algo, algo.framework()) {
            (Algorithm::Bfs, _) => data.push(flag(reached)),
            (_, Framework::Parallel) => data.extend([key, flag(reached)]),
            (_, Framework::Sequential) => {
                let known = s.popped || v == source;
                data.extend([if known { key } else { S::zero() }, flag(known), flag(s.popped)]);
            }
        }
    }
    Tensor::matrix(state.len(), w, data).expect("width matches")
}

fn flag<S: Scalar>(b: bool) -> S {
    if b {
        S::one()
    } else {
        S::zero()
    }
}

fn masked_argmax<S: Scalar>(values: &[S], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &m)) in values.iter().zip(mask).enumerate() {
        if m && best.map_or(true, |b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Arg-max predecessor of every node over its admissible candidates.
fn argmax_preds<S: Scalar>(logits: &Tensor<S>, mask: &[bool], n: usize) -> Vec<usize> {
    (0..n)
        .map(|v| masked_argmax(&logits.data()[v * n..(v + 1) * n], &mask[v * n..(v + 1) * n]).unwrap_or(v))
        .collect()
}

fn beta<S: Scalar>() -> S {
    S::lit(SMOOTH_L1_BETA)
}

/// Hard reach decisions from the decoder's reach column.
fn reach_from_logits<S: Scalar>(decoded: &Tensor<S>, col: usize) -> Vec<bool> {
    (0..decoded.rows()).map(|v| sigmoid(decoded.at(v, col)) > S::lit(0.5)).collect()
}

fn reach_column(algo: Algorithm) -> usize {
    if algo == Algorithm::Bfs {
        0
    } else {
        1
    }
}

impl<S: Scalar> Bound<'_, S> {
    /// Teacher-forced pass over a trace. Returns the mean per-step loss and the
    /// model's per-step predictions.
    pub fn teacher_forced(&self, tape: &mut Tape<S>, task: usize, trace: &Trace<S>) -> Result<(Var, RolloutRecord<S>)> {
        let t_total = trace.termination;
        if t_total == 0 || trace.steps.len() != t_total + 1 {
            return Err(Error::arg("teacher forcing needs a trace with at least one step"));
        }
        let mut record = RolloutRecord::new(trace.algo, trace.n());
        let mut h = self.zero_hidden(tape);
        let mut step_losses = Vec::with_capacity(t_total);
        for t in 0..t_total {
            let (loss, out) = self.teacher_forced_step(tape, task, trace, t, h, Some(&mut record))?;
            h = out.hidden;
            step_losses.push(loss);
        }
        record.steps = t_total;
        let total = tape.add_all(&step_losses)?;
        let loss = tape.scale(total, S::one() / S::lit(t_total as f64));
        Ok((loss, record))
    }

    /// Loss of teacher-forced step `t` (ground-truth input `steps[t]`, target
    /// `steps[t + 1]`) from hidden state `h`.
    pub fn teacher_forced_step(
        &self,
        tape: &mut Tape<S>,
        task: usize,
        trace: &Trace<S>,
        t: usize,
        h: Var,
        record: Option<&mut RolloutRecord<S>>,
    ) -> Result<(Var, StepOutput)> {
        let algo = trace.algo;
        let n = trace.n();
        if t >= trace.termination {
            return Err(Error::arg(format!("step {t} beyond trace length {}", trace.termination)));
        }
        let x = tape.constant(features(algo, trace.graph.source, &trace.steps[t]));
        let out = self.step(tape, task, x, h)?;
        let next = &trace.steps[t + 1];
        let reached_next: Vec<bool> = next.iter().map(|s| s.pred.is_some()).collect();
        let mut terms = Vec::new();

        // Predecessors of every node reached after this step.
        let targets: Vec<Option<usize>> = next.iter().map(|s| s.pred).collect();
        terms.push(tape.masked_softmax_ce(out.pred_logits, self.ctx.pred_mask.clone(), &targets)?);

        let done = if t + 1 == trace.termination { S::one() } else { S::zero() };
        terms.push(tape.bce_logits(out.term_logit, &Tensor::scalar(done), &[true])?);

        let (keys, reached, chosen) = match algo.framework() {
            Framework::Sequential => {
                let popped: Vec<bool> = trace.steps[t].iter().map(|s| s.popped).collect();
                let open: Vec<bool> = popped.iter().map(|&p| !p).collect();
                let u = trace.pop_sequence[t];
                let next_logits = out.next_logits.expect("sequential head");
                terms.push(tape.masked_softmax_ce(next_logits, Arc::from(open.clone()), &[Some(u)])?);
                let key_u = tape.gather_rows(out.decoded, Arc::from(vec![u]))?;
                let target = next[u].key.ok_or_else(|| Error::state("popped node without a key"))?;
                terms.push(tape.smooth_l1(key_u, &Tensor::scalar(target), beta())?);
                let chosen = masked_argmax(tape.value(next_logits).data(), &open).unwrap_or(u);
                let mut sel = popped;
                sel[chosen] = true;
                (decoded_keys(algo, tape.value(out.decoded), &sel), sel, Some(chosen))
            }
            Framework::Parallel => {
                let rc = reach_column(algo);
                let reach_logit = tape.slice_cols(out.decoded, rc, rc + 1)?;
                let reach_target = Tensor::column(reached_next.iter().map(|&r| flag(r)).collect());
                terms.push(tape.bce_logits(reach_logit, &reach_target, &vec![true; n])?);
                if algo != Algorithm::Bfs {
                    let key = tape.slice_cols(out.decoded, 0, 1)?;
                    let target = Tensor::column(next.iter().map(|s| s.key.unwrap_or(S::zero())).collect());
                    terms.push(tape.smooth_l1_masked(key, &target, &reached_next, beta())?);
                }
                let reach = reach_from_logits(tape.value(out.decoded), rc);
                (decoded_keys(algo, tape.value(out.decoded), &reach), reach, None)
            }
        };
        if let Some(record) = record {
            record.pop_sequence.extend(chosen);
            record.keys.push(keys);
            record.reached.push(reached);
            self.record_common(tape, &out, record);
        }
        Ok((tape.add_all(&terms)?, out))
    }

    fn record_common(&self, tape: &Tape<S>, out: &StepOutput, record: &mut RolloutRecord<S>) {
        record.preds.push(argmax_preds(tape.value(out.pred_logits), &self.ctx.pred_mask, self.ctx.n));
        record.termination_probs.push(sigmoid(tape.value(out.term_logit).item()));
    }
}

/// Decoded keys per node; BFS reports its reach flags as keys.
fn decoded_keys<S: Scalar>(algo: Algorithm, decoded: &Tensor<S>, reached: &[bool]) -> Vec<S> {
    if algo == Algorithm::Bfs {
        reached.iter().map(|&b| flag(b)).collect()
    } else {
        (0..decoded.rows()).map(|v| decoded.at(v, 0)).collect()
    }
}

/// Tape variables holding a free rollout's final outputs.
pub struct FreeRun<S> {
    pub record: RolloutRecord<S>,
    /// `n x 1` final keys (absent for BFS).
    pub final_keys: Option<Var>,
    /// `n x 1` final reach logits (parallel).
    pub final_reach: Option<Var>,
    pub final_pred_logits: Var,
    /// Next-node logits, admissible mask and chosen node at every sequential step.
    pub selections: Vec<(Var, Vec<bool>, usize)>,
}

impl<S: Scalar> Bound<'_, S> {
    /// Runs the model on its own predictions from the initial state of `g`.
    pub fn free<R: Rng>(
        &self,
        tape: &mut Tape<S>,
        task: usize,
        algo: Algorithm,
        g: &WeightedGraph,
        budget: Budget,
        mut selection: Selection<'_, S, R>,
    ) -> Result<FreeRun<S>> {
        let n = g.n;
        let (limit, learned) = match budget {
            Budget::Given(t) => (t, false),
            Budget::Learned { cap } => (cap, true),
        };
        if limit == 0 {
            return Err(Error::arg("a free rollout needs a positive step budget"));
        }
        let init = initial_state::<S>(algo, g);
        let mut record = RolloutRecord::new(algo, n);
        let mut h = self.zero_hidden(tape);
        let mut selections = Vec::new();
        let mut last: Option<StepOutput> = None;
        let mut final_keys = None;
        let mut final_reach = None;

        match algo.framework() {
            Framework::Sequential => {
                let mut key_col = tape.constant(Tensor::column(init.iter().map(|s| s.key.unwrap_or(S::zero())).collect()));
                let mut known: Vec<bool> = (0..n).map(|v| v == g.source).collect();
                let mut popped = vec![false; n];
                for _ in 0..limit {
                    let open: Vec<bool> = popped.iter().map(|&p| !p).collect();
                    if !open.iter().any(|&o| o) {
                        break;
                    }
                    let known_col = tape.constant(Tensor::column(known.iter().map(|&b| flag(b)).collect()));
                    let popped_col = tape.constant(Tensor::column(popped.iter().map(|&b| flag(b)).collect()));
                    let x = tape.concat_cols(&[key_col, known_col, popped_col])?;
                    let out = self.step(tape, task, x, h)?;
                    h = out.hidden;
                    let logits = out.next_logits.expect("sequential head");
                    let (u, hard) = match &mut selection {
                        Selection::Argmax => {
                            let u = masked_argmax(tape.value(logits).data(), &open).expect("open node exists");
                            let mut onehot = vec![S::zero(); n];
                            onehot[u] = S::one();
                            (u, tape.constant(Tensor::column(onehot)))
                        }
                        Selection::Gumbel { temperature, rng } => {
                            let s = gumbel_softmax_sample(tape, logits, &open, *temperature, &mut **rng)?;
                            (s.index, tape.reshape(s.hard, n, 1)?)
                        }
                    };
                    selections.push((logits, open, u));
                    // Only the chosen node's state changes: key += onehot * (pred - key).
                    let delta = tape.sub(out.decoded, key_col)?;
                    let masked = tape.mul(hard, delta)?;
                    key_col = tape.add(key_col, masked)?;
                    popped[u] = true;
                    known[u] = true;
                    record.pop_sequence.push(u);
                    record.reached.push(popped.clone());
                    record.keys.push(tape.value(key_col).data().to_vec());
                    self.record_common(tape, &out, &mut record);
                    record.steps += 1;
                    last = Some(out);
                    if learned && *record.termination_probs.last().unwrap() > S::lit(0.5) {
                        break;
                    }
                }
                final_keys = Some(key_col);
            }
            Framework::Parallel => {
                let rc = reach_column(algo);
                let mut x = tape.constant(features(algo, g.source, &init));
                for _ in 0..limit {
                    let out = self.step(tape, task, x, h)?;
                    h = out.hidden;
                    let reach = reach_from_logits(tape.value(out.decoded), rc);
                    let reach_col = tape.constant(Tensor::column(reach.iter().map(|&b| flag(b)).collect()));
                    x = if algo == Algorithm::Bfs {
                        reach_col
                    } else {
                        let key = tape.slice_cols(out.decoded, 0, 1)?;
                        let shown = tape.mul(key, reach_col)?;
                        final_keys = Some(key);
                        tape.concat_cols(&[shown, reach_col])?
                    };
                    final_reach = Some(tape.slice_cols(out.decoded, rc, rc + 1)?);
                    record.keys.push(decoded_keys(algo, tape.value(out.decoded), &reach));
                    record.reached.push(reach);
                    self.record_common(tape, &out, &mut record);
                    record.steps += 1;
                    last = Some(out);
                    if learned && *record.termination_probs.last().unwrap() > S::lit(0.5) {
                        break;
                    }
                }
            }
        }
        let last = last.ok_or_else(|| Error::state("free rollout executed no step"))?;
        if learned && record.steps == limit && *record.termination_probs.last().unwrap() <= S::lit(0.5) {
            record.truncated = true;
        }
        Ok(FreeRun { record, final_keys, final_reach, final_pred_logits: last.pred_logits, selections })
    }

    /// Loss on a free rollout's final outputs: keys of reachable nodes,
    /// reach flags (parallel) and predecessors of reachable nodes.
    pub fn final_output_loss(&self, tape: &mut Tape<S>, run: &FreeRun<S>, ex: &NaExample<S>) -> Result<Var> {
        let n = ex.graph.n;
        let reachable = ex.reachable();
        let mut terms = Vec::new();
        if let Some(k) = run.final_keys {
            let target = Tensor::column(ex.keys.iter().map(|k| k.unwrap_or(S::zero())).collect());
            terms.push(tape.smooth_l1_masked(k, &target, &reachable, beta())?);
        }
        if let Some(r) = run.final_reach {
            let target = Tensor::column(reachable.iter().map(|&b| flag(b)).collect());
            terms.push(tape.bce_logits(r, &target, &vec![true; n])?);
        }
        terms.push(tape.masked_softmax_ce(run.final_pred_logits, self.ctx.pred_mask.clone(), &ex.preds)?);
        tape.add_all(&terms)
    }

    /// BCE of each step's next-node scores against the node the run selected.
    /// `None` for parallel runs, which make no selections.
    pub fn selection_loss(&self, tape: &mut Tape<S>, run: &FreeRun<S>) -> Result<Option<Var>> {
        let n = self.ctx.n;
        let mut terms = Vec::new();
        for (logits, open, u) in &run.selections {
            let mut onehot = vec![S::zero(); n];
            onehot[*u] = S::one();
            terms.push(tape.bce_logits(*logits, &Tensor::row(onehot), open)?);
        }
        if terms.is_empty() {
            return Ok(None);
        }
        tape.add_all(&terms).map(Some)
    }
}

/// Teacher-forced rollout of a trained model (no gradients kept).
pub fn rollout_teacher_forced<S: Scalar>(params: &ExecutorParams<S>, trace: &Trace<S>) -> Result<RolloutRecord<S>> {
    let task = params.task_index(trace.algo)?;
    let ctx = GraphContext::new(&trace.graph);
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, &ctx);
    Ok(bound.teacher_forced(&mut tape, task, trace)?.1)
}

/// Free-running rollout with arg-max selection.
pub fn rollout_free<S: Scalar>(params: &ExecutorParams<S>, algo: Algorithm, g: &WeightedGraph, budget: Budget) -> Result<RolloutRecord<S>> {
    let task = params.task_index(algo)?;
    let ctx = GraphContext::new(g);
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, &ctx);
    let run = bound.free::<rand_chacha::ChaCha8Rng>(&mut tape, task, algo, g, budget, Selection::Argmax)?;
    Ok(run.record)
}

/// Rollout mode for [`rollout`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    TeacherForced,
    Free(Budget),
}

/// Teacher-forced rollout on a trace, or a free rollout on the trace's graph.
/// Free rollouts sample the next node with Gumbel noise from `rng` when given,
/// and take the arg-max otherwise.
pub fn rollout<S: Scalar, R: Rng>(params: &ExecutorParams<S>, trace: &Trace<S>, mode: Mode, rng: Option<&mut R>) -> Result<RolloutRecord<S>> {
    match mode {
        Mode::TeacherForced => rollout_teacher_forced(params, trace),
        Mode::Free(budget) => {
            let task = params.task_index(trace.algo)?;
            let ctx = GraphContext::new(&trace.graph);
            let mut tape = Tape::new();
            let bound = Bound::new(&mut tape, params, &ctx);
            let selection = match rng {
                Some(rng) => Selection::Gumbel { temperature: S::one(), rng },
                None => Selection::Argmax,
            };
            Ok(bound.free(&mut tape, task, trace.algo, &trace.graph, budget, selection)?.record)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::params::{init_params, Arch, ModelConfig};
    use crate::trace::run;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph() -> WeightedGraph {
        WeightedGraph::new(6, 2, vec![(0, 1, 0.5), (1, 2, 0.3), (0, 2, 0.9), (2, 3, 0.4), (3, 4, 0.8)]).unwrap()
    }

    #[test]
    fn sequential_features_hide_unknown_keys() {
        let t = run::<f64>(Algorithm::Dijkstra, &graph()).unwrap();
        let f = features(Algorithm::Dijkstra, 2, &t.steps[1]);
        // After popping the source, its neighbours have keys but are not known yet.
        assert_eq!(f.at(2, 0), 0.0);
        assert_eq!((f.at(2, 1), f.at(2, 2)), (1.0, 1.0));
        assert_eq!(f.at(1, 0), 0.0);
        assert_eq!(f.at(1, 1), 0.0);
    }

    #[test]
    fn tf_rollout_length_equals_trace() {
        for algo in [Algorithm::Dijkstra, Algorithm::BellmanFord, Algorithm::Bfs] {
            let t = run::<f64>(algo, &graph()).unwrap();
            let p = init_params::<f64>(&ModelConfig::new(Arch::Ne, vec![algo]), 1).unwrap();
            let r = rollout_teacher_forced(&p, &t).unwrap();
            assert_eq!(r.steps, t.termination);
            assert_eq!(r.preds.len(), t.termination);
        }
    }

    #[test]
    fn free_sequential_pops_each_node_once() {
        let g = graph();
        let p = init_params::<f64>(&ModelConfig::new(Arch::NePlusPlus, vec![Algorithm::Prim]), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = run::<f64>(Algorithm::Prim, &g).unwrap();
        let r = rollout(&p, &t, Mode::Free(Budget::Given(6)), Some(&mut rng)).unwrap();
        let mut seen = r.pop_sequence.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), r.pop_sequence.len());
        assert_eq!(r.steps, 6);
    }

    #[test]
    fn learned_budget_never_exceeds_cap() {
        let g = graph();
        for algo in [Algorithm::Dijkstra, Algorithm::ReliablePar] {
            let p = init_params::<f64>(&ModelConfig::new(Arch::Ne, vec![algo]), 2).unwrap();
            let r = rollout_free(&p, algo, &g, Budget::Learned { cap: g.n }).unwrap();
            assert!(r.steps >= 1 && r.steps <= g.n);
            assert_eq!(r.truncated, r.steps == g.n && *r.termination_probs.last().unwrap() <= 0.5);
        }
    }
}
