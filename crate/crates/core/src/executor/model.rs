//! One encode-process-decode step of an executor on a computation tape.

use std::sync::Arc;

use super::params::{Arch, Dense, EdgeDense, ExecutorParams, Message, EDGE_FEATURES};
use crate::diff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::graphgen::WeightedGraph;
use crate::scalar::Scalar;

/// Message-passing structure of one graph: both orientations of every edge
/// followed by one self-loop per node.
#[derive(Clone, Debug)]
pub struct GraphContext<S> {
    pub n: usize,
    pub senders: Arc<[usize]>,
    pub receivers: Arc<[usize]>,
    receiver_list: Vec<usize>,
    /// `[weight, is_self]` per directed edge; self-loops carry weight 0.
    edge_features: Tensor<S>,
    /// Flat position `receiver * n + sender` of each directed edge.
    pred_positions: Arc<[usize]>,
    /// Row `v` admits `v` and its neighbours.
    pub pred_mask: Arc<[bool]>,
    pool: Vec<usize>,
}

impl<S: Scalar> GraphContext<S> {
    pub fn new(g: &WeightedGraph) -> Self {
        let n = g.n;
        let adj = g.adjacency();
        let mut senders = Vec::new();
        let mut receivers = Vec::new();
        let mut feats = Vec::new();
        for (v, list) in adj.iter().enumerate() {
            for &(u, w) in list {
                senders.push(u);
                receivers.push(v);
                feats.extend([S::lit(w), S::zero()]);
            }
        }
        for v in 0..n {
            senders.push(v);
            receivers.push(v);
            feats.extend([S::zero(), S::one()]);
        }
        let m = senders.len();
        let pred_positions: Vec<usize> = senders.iter().zip(&receivers).map(|(&s, &r)| r * n + s).collect();
        let mut pred_mask = vec![false; n * n];
        for &p in &pred_positions {
            pred_mask[p] = true;
        }
        GraphContext {
            n,
            senders: Arc::from(senders),
            receiver_list: receivers.clone(),
            receivers: Arc::from(receivers),
            edge_features: Tensor::matrix(m, EDGE_FEATURES, feats).expect("two features per edge"),
            pred_positions: Arc::from(pred_positions),
            pred_mask: Arc::from(pred_mask),
            pool: vec![0; n],
        }
    }

    /// Number of directed messages including self-loops.
    pub fn messages(&self) -> usize {
        self.senders.len()
    }
}

/// Parameters and graph constants recorded on one tape.
pub struct Bound<'a, S> {
    pub params: &'a ExecutorParams<S>,
    pub vars: Vec<Var>,
    pub ctx: &'a GraphContext<S>,
    /// Edge embedding per task (NE tasks share one).
    edges: Vec<Var>,
}

impl<'a, S: Scalar> Bound<'a, S> {
    pub fn new(tape: &mut Tape<S>, params: &'a ExecutorParams<S>, ctx: &'a GraphContext<S>) -> Self {
        let vars = params.store.bind(tape);
        let raw = tape.constant(ctx.edge_features.clone());
        let mut bound = Bound { params, vars, ctx, edges: Vec::new() };
        let layout = &params.layout;
        let embed = |b: &Bound<S>, tape: &mut Tape<S>, d: &Dense| b.dense(tape, d, &[raw]).expect("edge features are m x 2");
        bound.edges = match &layout.ne_encoder {
            Some(enc) => vec![embed(&bound, tape, &enc.edge); layout.tasks.len()],
            None => layout
                .tasks
                .iter()
                .map(|t| embed(&bound, tape, &t.edge_encoder.as_ref().expect("NE++ task has an edge encoder").edge))
                .collect(),
        };
        bound
    }

    /// Gradient of every parameter (zeros where unused), in store order.
    pub fn parameter_gradients(&self, grads: &crate::diff::Gradients<S>) -> Vec<Tensor<S>> {
        self.vars
            .iter()
            .zip(self.params.store.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t))
            .collect()
    }

    fn dense(&self, tape: &mut Tape<S>, d: &Dense, parts: &[Var]) -> Result<Var> {
        let mut terms = Vec::with_capacity(parts.len());
        for (&x, w) in parts.iter().zip(&d.parts) {
            terms.push(tape.matmul(x, self.vars[w.0])?);
        }
        let sum = sum_vars(tape, &terms)?;
        tape.add_row(sum, self.vars[d.bias.0])
    }

    fn edge_dense(&self, tape: &mut Tape<S>, d: &EdgeDense, parts: &[Var], edges: Var) -> Result<Var> {
        let mut s_terms = Vec::new();
        let mut r_terms = Vec::new();
        for (i, &x) in parts.iter().enumerate() {
            s_terms.push(tape.matmul(x, self.vars[d.sender[i].0])?);
            r_terms.push(tape.matmul(x, self.vars[d.receiver[i].0])?);
        }
        let s = sum_vars(tape, &s_terms)?;
        let r = sum_vars(tape, &r_terms)?;
        let s = tape.gather_rows(s, self.ctx.senders.clone())?;
        let r = tape.gather_rows(r, self.ctx.receivers.clone())?;
        let e = tape.matmul(edges, self.vars[d.edge.0])?;
        let sr = tape.add(s, r)?;
        let all = tape.add(sr, e)?;
        tape.add_row(all, self.vars[d.bias.0])
    }

    fn aggregate(&self, tape: &mut Tape<S>, messages: Var) -> Result<Var> {
        tape.max_aggregate(messages, &self.ctx.receiver_list, self.ctx.n)
    }
}

fn sum_vars<S: Scalar>(tape: &mut Tape<S>, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Outputs of one step. All are tape variables.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// `n x decoder_width`: key and/or reach logit per node.
    pub decoded: Var,
    /// `n x n` predecessor scores; row `v` is only meaningful on `pred_mask`.
    pub pred_logits: Var,
    /// `1 x n` next-node scores (sequential tasks).
    pub next_logits: Option<Var>,
    /// `1 x 1` termination logit.
    pub term_logit: Var,
    /// `n x l` hidden state for the next step.
    pub hidden: Var,
}

impl<S: Scalar> Bound<'_, S> {
    /// One step of task `task` from node features `x` (`n x input_width`) and hidden state `h`.
    pub fn step(&self, tape: &mut Tape<S>, task: usize, x: Var, h: Var) -> Result<StepOutput> {
        let layout = &self.params.layout;
        let heads = &layout.tasks[task];
        let edges = self.edges[task];
        let (repr, hidden) = match self.params.config.arch {
            Arch::Ne => {
                let enc = layout.ne_encoder.as_ref().expect("NE layout has an encoder");
                let zx = tape.matmul(x, self.vars[enc.slots[task].0])?;
                let zh = tape.matmul(h, self.vars[enc.hidden.0])?;
                let z = tape.add(zx, zh)?;
                let z = tape.add_row(z, self.vars[enc.bias.0])?;
                let mut outs = Vec::new();
                for p in &layout.processors {
                    let Message::Node(msg) = &p.message else { unreachable!("NE processors message over nodes") };
                    let m = self.edge_dense(tape, msg, &[z], edges)?;
                    let agg = self.aggregate(tape, m)?;
                    outs.push(self.dense(tape, &p.update, &[z, agg])?);
                }
                let hidden = sum_vars(tape, &outs)?;
                (vec![z, hidden], hidden)
            }
            Arch::NePlusPlus => {
                let enc = heads.edge_encoder.as_ref().expect("NE++ task has an edge encoder");
                let lin = self.edge_dense(tape, &enc.linear, &[h, x], edges)?;
                let pre = self.edge_dense(tape, &enc.mlp_in, &[h, x], edges)?;
                let act = tape.relu(pre);
                let mlp = self.dense(tape, &enc.mlp_out, &[act])?;
                let z_edge = tape.add(lin, mlp)?;
                let mut outs = Vec::new();
                for p in &layout.processors {
                    let Message::Edge(msg) = &p.message else { unreachable!("NE++ processors message over edges") };
                    let m = self.dense(tape, msg, &[z_edge])?;
                    let agg = self.aggregate(tape, m)?;
                    outs.push(self.dense(tape, &p.update, &[h, agg])?);
                }
                let hidden = sum_vars(tape, &outs)?;
                (vec![x, hidden], hidden)
            }
        };

        let decoded = self.dense(tape, &heads.decoder, &repr)?;
        let scores = self.edge_dense(tape, &heads.pred, &repr, edges)?;
        let n = self.ctx.n;
        let pred_logits = tape.scatter(scores, self.ctx.pred_positions.clone(), n, n)?;
        let next_logits = match &heads.next {
            Some(d) => {
                let col = self.dense(tape, d, &repr)?;
                Some(tape.reshape(col, 1, n)?)
            }
            None => None,
        };
        let t = &heads.termination;
        let m = self.edge_dense(tape, &t.message, &repr, edges)?;
        let agg = self.aggregate(tape, m)?;
        let mut parts = repr.clone();
        parts.push(agg);
        let node = self.dense(tape, &t.update, &parts)?;
        let pooled = tape.max_aggregate(node, &self.ctx.pool, 1)?;
        let term_logit = self.dense(tape, &t.readout, &[pooled])?;
        Ok(StepOutput { decoded, pred_logits, next_logits, term_logit, hidden })
    }

    /// Zero hidden state `n x l`.
    pub fn zero_hidden(&self, tape: &mut Tape<S>) -> Var {
        tape.constant(Tensor::zeros(vec![self.ctx.n, self.params.config.hidden]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::params::{init_params, input_width, ModelConfig};
    use crate::trace::Algorithm;

    fn graph() -> WeightedGraph {
        WeightedGraph::new(4, 0, vec![(0, 1, 0.5), (1, 2, 0.3), (0, 2, 0.9)]).unwrap()
    }

    #[test]
    fn context_layout() {
        let ctx = GraphContext::<f64>::new(&graph());
        assert_eq!(ctx.messages(), 6 + 4);
        // Node 3 is isolated: only its self-loop reaches it.
        let into3: Vec<usize> = (0..ctx.messages()).filter(|&i| ctx.receivers[i] == 3).collect();
        assert_eq!(into3.len(), 1);
        assert_eq!(ctx.senders[into3[0]], 3);
        assert!(ctx.pred_mask[3 * 4 + 3]);
        assert_eq!(ctx.pred_mask.iter().filter(|&&m| m).count(), 10);
    }

    #[test]
    fn zero_parameters_give_zero_hidden_and_uniform_logits() {
        for arch in [Arch::Ne, Arch::NePlusPlus] {
            let algo = Algorithm::Dijkstra;
            let mut p = init_params::<f64>(&ModelConfig::new(arch, vec![algo]), 1).unwrap();
            for t in p.store.tensors_mut() {
                t.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
            let ctx = GraphContext::new(&graph());
            let mut tape = Tape::new();
            let b = Bound::new(&mut tape, &p, &ctx);
            let x = tape.constant(Tensor::filled(vec![4, input_width(algo)], 0.7));
            let h = b.zero_hidden(&mut tape);
            let out = b.step(&mut tape, 0, x, h).unwrap();
            assert!(tape.value(out.hidden).data().iter().all(|&v| v == 0.0));
            let next = tape.value(out.next_logits.unwrap()).data().to_vec();
            assert!(next.iter().all(|&v| v == next[0]));
            assert_eq!(tape.value(out.term_logit).item(), 0.0);
        }
    }

    #[test]
    fn two_processors_sum() {
        let algo = Algorithm::BellmanFord;
        for arch in [Arch::Ne, Arch::NePlusPlus] {
            let single = ModelConfig::new(arch, vec![algo]);
            let double = ModelConfig { processors: 2, ..single.clone() };
            let p1 = init_params::<f64>(&single, 5).unwrap();
            let mut p2 = init_params::<f64>(&double, 5).unwrap();
            // Copy every shared tensor from p1 and zero the second processor.
            for i in 0..p2.store.len() {
                let name = p2.store.names()[i].clone();
                p2.store.tensors_mut()[i] = match p1.store.id_of(&name) {
                    Some(id) => p1.store.get(id).clone(),
                    None => {
                        let t = &p2.store.tensors()[i];
                        Tensor::zeros(t.shape().to_vec())
                    }
                };
            }
            let ctx = GraphContext::new(&graph());
            let run = |p: &ExecutorParams<f64>| {
                let mut tape = Tape::new();
                let b = Bound::new(&mut tape, p, &ctx);
                let x = tape.constant(Tensor::filled(vec![4, 2], 0.3));
                let h = tape.constant(Tensor::filled(vec![4, p.config.hidden], 0.1));
                let out = b.step(&mut tape, 0, x, h).unwrap();
                (tape.value(out.hidden).clone(), tape.value(out.decoded).clone())
            };
            assert_eq!(run(&p1), run(&p2));
        }
    }
}
