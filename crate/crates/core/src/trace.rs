//! Exact execution of the nine classical algorithms with full step traces.
//!
//! Parallel algorithms sweep every edge (both orientations) against the
//! previous sweep's state until a sweep changes nothing; that confirming sweep
//! is recorded, so `termination` counts it. Sequential algorithms repeatedly
//! pop the extremal reached node (lowest index on ties) and relax its
//! neighbours.

use std::fmt;
use std::str::FromStr;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graphgen::WeightedGraph;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Bfs,
    BellmanFord,
    WidestPar,
    ReliablePar,
    Prim,
    Dijkstra,
    Dfs,
    WidestSeq,
    ReliableSeq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Framework {
    Parallel,
    Sequential,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::Bfs,
        Algorithm::BellmanFord,
        Algorithm::WidestPar,
        Algorithm::ReliablePar,
        Algorithm::Prim,
        Algorithm::Dijkstra,
        Algorithm::Dfs,
        Algorithm::WidestSeq,
        Algorithm::ReliableSeq,
    ];

    pub fn framework(self) -> Framework {
        match self {
            Algorithm::Bfs | Algorithm::BellmanFord | Algorithm::WidestPar | Algorithm::ReliablePar => {
                Framework::Parallel
            }
            _ => Framework::Sequential,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bfs => "bfs",
            Algorithm::BellmanFord => "bellman-ford",
            Algorithm::WidestPar => "widest-par",
            Algorithm::ReliablePar => "reliable-par",
            Algorithm::Prim => "prim",
            Algorithm::Dijkstra => "dijkstra",
            Algorithm::Dfs => "dfs",
            Algorithm::WidestSeq => "widest-seq",
            Algorithm::ReliableSeq => "reliable-seq",
        }
    }

    /// Whether the key is maximised (widest, most-reliable) rather than minimised.
    pub fn maximises(self) -> bool {
        matches!(
            self,
            Algorithm::Bfs | Algorithm::WidestPar | Algorithm::ReliablePar | Algorithm::WidestSeq | Algorithm::ReliableSeq
        )
    }

    /// Numeric key of a node that has not been reached yet.
    fn unreached_key<S: Scalar>(self) -> S {
        if self.maximises() {
            S::zero()
        } else {
            S::infinity()
        }
    }

    fn source_key<S: Scalar>(self, n: usize) -> S {
        match self {
            Algorithm::Bfs | Algorithm::ReliablePar | Algorithm::ReliableSeq => S::one(),
            // min(key, w) with every w <= 1 makes 1.0 equivalent to infinity here.
            Algorithm::WidestPar | Algorithm::WidestSeq => S::one(),
            Algorithm::BellmanFord | Algorithm::Prim | Algorithm::Dijkstra => S::zero(),
            Algorithm::Dfs => S::lit(n as f64),
        }
    }

    /// Returns the new key for `v` if relaxing the edge from `u` changes it.
    fn relax<S: Scalar>(self, u_key: S, v_key: S, v_popped: bool, w: S) -> Option<S> {
        let candidate = match self {
            Algorithm::Bfs => {
                return (v_key == S::zero() && u_key == S::one()).then_some(S::one());
            }
            Algorithm::BellmanFord | Algorithm::Dijkstra => {
                let c = u_key + w;
                return (v_key > c).then_some(c);
            }
            Algorithm::Prim => {
                return (!v_popped && v_key > w).then_some(w);
            }
            Algorithm::Dfs => {
                return (v_key == S::infinity()).then(|| u_key - S::one());
            }
            Algorithm::WidestPar | Algorithm::WidestSeq => u_key.min(w),
            Algorithm::ReliablePar | Algorithm::ReliableSeq => u_key * w,
        };
        (v_key < candidate).then_some(candidate)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace('_', "-");
        let algo = match lower.as_str() {
            "bfs" | "bfs-p" => Algorithm::Bfs,
            "bellman-ford" | "bellmanford" | "bellman-ford-p" => Algorithm::BellmanFord,
            "widest-par" | "widest-p" => Algorithm::WidestPar,
            "reliable-par" | "reliable-p" | "most-reliable-par" => Algorithm::ReliablePar,
            "prim" | "prim-s" => Algorithm::Prim,
            "dijkstra" | "dijkstra-s" => Algorithm::Dijkstra,
            "dfs" | "dfs-s" => Algorithm::Dfs,
            "widest-seq" | "widest-s" | "widest" => Algorithm::WidestSeq,
            "reliable-seq" | "reliable-s" | "most-reliable-seq" | "most-reliable" => Algorithm::ReliableSeq,
            _ => return Err(Error::arg(format!("unknown algorithm '{s}'"))),
        };
        Ok(algo)
    }
}

/// State of one node at one step. `key == None` is the UNREACHED sentinel and
/// holds exactly when `pred == None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeState<S> {
    pub key: Option<S>,
    pub pred: Option<usize>,
    pub popped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace<S> {
    pub graph: WeightedGraph,
    pub algo: Algorithm,
    /// `steps[0]` is the initial state; `steps[t]` the state after step `t`.
    pub steps: Vec<Vec<NodeState<S>>>,
    /// Nodes in the order they left the queue (sequential only).
    pub pop_sequence: Vec<usize>,
    /// Number of executed steps `T`; `steps.len() == T + 1`.
    pub termination: usize,
}

struct Working<S> {
    keys: Vec<S>,
    preds: Vec<Option<usize>>,
    popped: Vec<bool>,
}

impl<S: Scalar> Working<S> {
    fn init(algo: Algorithm, g: &WeightedGraph) -> Self {
        let mut keys = vec![algo.unreached_key::<S>(); g.n];
        let mut preds = vec![None; g.n];
        keys[g.source] = algo.source_key(g.n);
        preds[g.source] = Some(g.source);
        Working { keys, preds, popped: vec![false; g.n] }
    }

    fn snapshot(&self) -> Vec<NodeState<S>> {
        (0..self.keys.len())
            .map(|i| NodeState {
                key: self.preds[i].map(|_| self.keys[i]),
                pred: self.preds[i],
                popped: self.popped[i],
            })
            .collect()
    }
}

fn weights_as<S: Scalar>(g: &WeightedGraph) -> Vec<Vec<(usize, S)>> {
    g.adjacency()
        .into_iter()
        .map(|list| list.into_iter().map(|(v, w)| (v, S::lit(w))).collect())
        .collect()
}

/// Runs a parallel algorithm with synchronous sweeps.
pub fn run_parallel<S: Scalar>(algo: Algorithm, g: &WeightedGraph) -> Result<Trace<S>> {
    if algo.framework() != Framework::Parallel {
        return Err(Error::arg(format!("{algo} is not a parallel algorithm")));
    }
    let adj = weights_as::<S>(g);
    let mut state = Working::<S>::init(algo, g);
    let mut steps = vec![state.snapshot()];
    // Shortest-path style relaxations settle within n - 1 changing sweeps.
    for _ in 0..=g.n {
        let prev_keys = state.keys.clone();
        let prev_reached: Vec<bool> = state.preds.iter().map(Option::is_some).collect();
        let mut changed = false;
        for v in 0..g.n {
            for &(u, w) in &adj[v] {
                if !prev_reached[u] {
                    continue;
                }
                if let Some(k) = algo.relax(prev_keys[u], state.keys[v], false, w) {
                    state.keys[v] = k;
                    state.preds[v] = Some(u);
                    changed = true;
                }
            }
        }
        steps.push(state.snapshot());
        if !changed {
            let termination = steps.len() - 1;
            return Ok(Trace { graph: g.clone(), algo, steps, pop_sequence: Vec::new(), termination });
        }
    }
    Err(Error::state(format!("{algo} did not reach a fixed point within n + 1 sweeps")))
}

/// Runs a sequential (priority queue) algorithm.
pub fn run_sequential<S: Scalar>(algo: Algorithm, g: &WeightedGraph) -> Result<Trace<S>> {
    if algo.framework() != Framework::Sequential {
        return Err(Error::arg(format!("{algo} is not a sequential algorithm")));
    }
    let adj = weights_as::<S>(g);
    let mut state = Working::<S>::init(algo, g);
    let mut steps = vec![state.snapshot()];
    let mut pop_sequence = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for v in 0..g.n {
            if state.popped[v] || state.preds[v].is_none() {
                continue;
            }
            best = match best {
                None => Some(v),
                Some(b) => {
                    let better = if algo.maximises() {
                        state.keys[v] > state.keys[b]
                    } else {
                        state.keys[v] < state.keys[b]
                    };
                    Some(if better { v } else { b })
                }
            };
        }
        let Some(u) = best else { break };
        state.popped[u] = true;
        for &(v, w) in &adj[u] {
            if let Some(k) = algo.relax(state.keys[u], state.keys[v], state.popped[v], w) {
                state.keys[v] = k;
                state.preds[v] = Some(u);
            }
        }
        pop_sequence.push(u);
        steps.push(state.snapshot());
    }
    let termination = pop_sequence.len();
    Ok(Trace { graph: g.clone(), algo, steps, pop_sequence, termination })
}

/// The `initialise_nodes` state: only the source is reached, with itself as predecessor.
pub fn initial_state<S: Scalar>(algo: Algorithm, g: &WeightedGraph) -> Vec<NodeState<S>> {
    Working::<S>::init(algo, g).snapshot()
}

/// Dispatches on the algorithm's framework.
pub fn run<S: Scalar>(algo: Algorithm, g: &WeightedGraph) -> Result<Trace<S>> {
    match algo.framework() {
        Framework::Parallel => run_parallel(algo, g),
        Framework::Sequential => run_sequential(algo, g),
    }
}

impl<S: Scalar> Trace<S> {
    /// Final keys and predecessors.
    pub fn final_output(&self) -> (Vec<Option<S>>, Vec<Option<usize>>) {
        let last = self.steps.last().expect("trace has at least the initial step");
        (last.iter().map(|s| s.key).collect(), last.iter().map(|s| s.pred).collect())
    }

    pub fn n(&self) -> usize {
        self.graph.n
    }

    /// Nodes that end up reached.
    pub fn reachable(&self) -> Vec<bool> {
        self.steps.last().unwrap().iter().map(|s| s.pred.is_some()).collect()
    }

    pub fn to_json(&self) -> Value {
        let steps: Vec<Value> = self
            .steps
            .iter()
            .map(|step| {
                let keys: Vec<Value> = step
                    .iter()
                    .map(|s| match s.key {
                        Some(k) => json!(k.as_f64()),
                        None => json!("UNREACHED"),
                    })
                    .collect();
                let preds: Vec<Value> = step.iter().map(|s| json!(s.pred)).collect();
                let mut obj = json!({ "key": keys, "pred": preds });
                if self.algo.framework() == Framework::Sequential {
                    obj["popped"] = json!(step.iter().map(|s| s.popped).collect::<Vec<_>>());
                }
                obj
            })
            .collect();
        json!({
            "algo": self.algo.name(),
            "graph": self.graph,
            "termination": self.termination,
            "pop_sequence": self.pop_sequence,
            "steps": steps,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |m: &str| Error::arg(format!("malformed trace: {m}"));
        let algo: Algorithm = v["algo"].as_str().ok_or_else(|| bad("missing algo"))?.parse()?;
        let graph: WeightedGraph =
            serde_json::from_value(v["graph"].clone()).map_err(|e| bad(&e.to_string()))?;
        graph.validate()?;
        let termination = v["termination"].as_u64().ok_or_else(|| bad("missing termination"))? as usize;
        let pop_sequence = v["pop_sequence"]
            .as_array()
            .ok_or_else(|| bad("missing pop_sequence"))?
            .iter()
            .map(|x| x.as_u64().map(|x| x as usize).ok_or_else(|| bad("pop index")))
            .collect::<Result<Vec<_>>>()?;
        let mut steps = Vec::new();
        for step in v["steps"].as_array().ok_or_else(|| bad("missing steps"))? {
            let keys = step["key"].as_array().ok_or_else(|| bad("missing key"))?;
            let preds = step["pred"].as_array().ok_or_else(|| bad("missing pred"))?;
            if keys.len() != graph.n || preds.len() != graph.n {
                return Err(bad("step width differs from n"));
            }
            let popped = step["popped"].as_array();
            let mut nodes = Vec::with_capacity(graph.n);
            for i in 0..graph.n {
                let key = match &keys[i] {
                    Value::String(s) if s == "UNREACHED" => None,
                    x => Some(S::lit(x.as_f64().ok_or_else(|| bad("key"))?)),
                };
                let pred = match &preds[i] {
                    Value::Null => None,
                    x => Some(x.as_u64().ok_or_else(|| bad("pred"))? as usize),
                };
                let popped = popped.and_then(|p| p.get(i)).and_then(Value::as_bool).unwrap_or(false);
                nodes.push(NodeState { key, pred, popped });
            }
            steps.push(nodes);
        }
        if steps.len() != termination + 1 {
            return Err(bad("steps length must be termination + 1"));
        }
        Ok(Trace { graph, algo, steps, pop_sequence, termination })
    }
}
