//! Evaluation metrics and their aggregation per graph family and size.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::executor::{rollout_free, rollout_teacher_forced, Budget, ExecutorParams, RolloutRecord};
use crate::graphgen::Family;
use crate::scalar::Scalar;
use crate::trace::{Algorithm, Framework, Trace};

/// Metrics of one graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphMetrics {
    /// Teacher-forced next-node error rate (sequential only).
    pub next_node_error: Option<f64>,
    /// Key MSE, or 0/1 accuracy for BFS.
    pub key: f64,
    pub pred_error: f64,
    pub term_accuracy: f64,
    /// Prediction and truth had different lengths; compared up to the shorter.
    pub length_mismatch: bool,
}

/// `1 - |t_pred - t_true| / t_true`; negative when the prediction overshoots by more than `t_true`.
pub fn termination_accuracy(t_pred: usize, t_true: usize) -> Result<f64> {
    if t_true == 0 {
        return Err(Error::arg("termination accuracy needs a positive true step count"));
    }
    Ok(1.0 - (t_pred as f64 - t_true as f64).abs() / t_true as f64)
}

/// Fraction of positions where the popped nodes differ, over the shorter sequence.
pub fn next_node_error(predicted: &[usize], truth: &[usize]) -> (f64, bool) {
    let len = predicted.len().min(truth.len());
    let wrong = predicted.iter().zip(truth).filter(|(a, b)| a != b).count();
    let rate = if len == 0 { 0.0 } else { wrong as f64 / len as f64 };
    (rate, predicted.len() != truth.len())
}

/// Fraction of truly reachable nodes whose predicted predecessor is wrong.
pub fn pred_error(predicted: &[usize], truth: &[Option<usize>]) -> f64 {
    let mut total = 0;
    let mut wrong = 0;
    for (p, t) in predicted.iter().zip(truth) {
        if let Some(t) = t {
            total += 1;
            if p != t {
                wrong += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        wrong as f64 / total as f64
    }
}

/// Share of nodes whose reach probability lands on the right side of 0.5.
pub fn bfs_accuracy<S: Scalar>(probs: &[S], truth: &[bool]) -> f64 {
    let right = probs.iter().zip(truth).filter(|(&p, &t)| (p > S::lit(0.5)) == t).count();
    right as f64 / truth.len().max(1) as f64
}

fn mse<S: Scalar>(pred: &[S], truth: &[Option<S>], include: impl Fn(usize) -> bool) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for (v, (p, t)) in pred.iter().zip(truth).enumerate() {
        if let (Some(t), true) = (t, include(v)) {
            let d = p.as_f64() - t.as_f64();
            total += d * d;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn check_same_graph<S: Scalar>(record: &RolloutRecord<S>, truth: &Trace<S>) -> Result<()> {
    if record.algo != truth.algo || record.n != truth.n() {
        return Err(Error::arg("rollout and trace describe different runs"));
    }
    Ok(())
}

/// Sequential metrics: next-node error from a teacher-forced rollout, key
/// MSE over nodes the free rollout selected (reachable ones), predecessor
/// error over reachable nodes, and termination accuracy of the free rollout.
pub fn sequential_metrics<S: Scalar>(free: &RolloutRecord<S>, teacher_forced: &RolloutRecord<S>, truth: &Trace<S>) -> Result<GraphMetrics> {
    check_same_graph(free, truth)?;
    check_same_graph(teacher_forced, truth)?;
    let (next, mismatch) = next_node_error(&teacher_forced.pop_sequence, &truth.pop_sequence);
    let (keys, preds) = truth.final_output();
    let mut selected = vec![false; truth.n()];
    for &u in &free.pop_sequence {
        selected[u] = true;
    }
    Ok(GraphMetrics {
        next_node_error: Some(next),
        key: mse(free.final_keys(), &keys, |v| selected[v]),
        pred_error: pred_error(free.final_preds(), &preds),
        term_accuracy: termination_accuracy(free.steps, truth.termination)?,
        length_mismatch: mismatch,
    })
}

/// Parallel metrics: key MSE over reachable nodes (BFS: reach accuracy over
/// all nodes), predecessor error over reachable nodes, termination accuracy.
pub fn parallel_metrics<S: Scalar>(free: &RolloutRecord<S>, truth: &Trace<S>) -> Result<GraphMetrics> {
    check_same_graph(free, truth)?;
    let (keys, preds) = truth.final_output();
    let key = if truth.algo == Algorithm::Bfs {
        bfs_accuracy(free.final_keys(), &truth.reachable())
    } else {
        mse(free.final_keys(), &keys, |_| true)
    };
    Ok(GraphMetrics {
        next_node_error: None,
        key,
        pred_error: pred_error(free.final_preds(), &preds),
        term_accuracy: termination_accuracy(free.steps, truth.termination)?,
        length_mismatch: false,
    })
}

impl<S: Scalar> RolloutRecord<S> {
    /// The record a perfect executor would produce for `truth`.
    pub fn from_trace(truth: &Trace<S>) -> Self {
        let n = truth.n();
        let sequential = truth.algo.framework() == Framework::Sequential;
        let mut record = RolloutRecord {
            algo: truth.algo,
            n,
            keys: Vec::new(),
            reached: Vec::new(),
            preds: Vec::new(),
            pop_sequence: truth.pop_sequence.clone(),
            termination_probs: Vec::new(),
            steps: truth.termination,
            truncated: false,
            trajectory_losses: Vec::new(),
        };
        for (t, step) in truth.steps.iter().enumerate().skip(1) {
            let reached: Vec<bool> = if sequential {
                step.iter().map(|s| s.popped).collect()
            } else {
                step.iter().map(|s| s.pred.is_some()).collect()
            };
            let keys = step
                .iter()
                .zip(&reached)
                .map(|(s, &r)| match (truth.algo, r) {
                    (Algorithm::Bfs, _) => if r { S::one() } else { S::zero() },
                    (_, true) => s.key.unwrap_or(S::zero()),
                    (_, false) if sequential => S::zero(),
                    (_, false) => s.key.unwrap_or(S::zero()),
                })
                .collect();
            record.keys.push(keys);
            record.reached.push(reached);
            record.preds.push(step.iter().enumerate().map(|(v, s)| s.pred.unwrap_or(v)).collect());
            record.termination_probs.push(if t == truth.termination { S::one() } else { S::zero() });
        }
        record
    }
}

/// How many steps evaluation rollouts may run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalBudget {
    /// Termination head, capped at `n` steps.
    Learned,
    /// The true step count of each graph.
    Given,
}

/// Rolls the model out on `truth` and scores it.
pub fn evaluate_graph<S: Scalar>(params: &ExecutorParams<S>, truth: &Trace<S>, budget: EvalBudget) -> Result<GraphMetrics> {
    let b = match budget {
        EvalBudget::Learned => Budget::Learned { cap: truth.n() },
        EvalBudget::Given => Budget::Given(truth.termination),
    };
    let free = rollout_free(params, truth.algo, &truth.graph, b)?;
    match truth.algo.framework() {
        Framework::Sequential => {
            let tf = rollout_teacher_forced(params, truth)?;
            sequential_metrics(&free, &tf, truth)
        }
        Framework::Parallel => parallel_metrics(&free, truth),
    }
}

/// Scores every trace in parallel; output order follows input order.
pub fn evaluate<S: Scalar>(params: &ExecutorParams<S>, traces: &[Trace<S>], budget: EvalBudget) -> Result<Vec<GraphMetrics>> {
    traces.par_iter().map(|t| evaluate_graph(params, t, budget)).collect()
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

/// One row of a report: a family at a size, or the cross-family summary
/// (`family == None`) at a size.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub family: Option<Family>,
    pub n: usize,
    pub graphs: usize,
    pub next_node_error: Option<Stat>,
    pub key: Stat,
    pub pred_error: Stat,
    pub term_accuracy: Stat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub algo: Algorithm,
    pub rows: Vec<MetricRow>,
}

/// Scored graph tagged with its family and size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub family: Family,
    pub n: usize,
    pub metrics: GraphMetrics,
}

fn row(family: Option<Family>, n: usize, graphs: usize, cols: [Vec<f64>; 4], has_next: bool) -> MetricRow {
    let [next, key, pred, term] = cols;
    MetricRow {
        family,
        n,
        graphs,
        next_node_error: has_next.then(|| Stat::of(&next)),
        key: Stat::of(&key),
        pred_error: Stat::of(&pred),
        term_accuracy: Stat::of(&term),
    }
}

/// Per-(family, size) means over graphs, then per size the mean and
/// population std of the family means.
pub fn aggregate(algo: Algorithm, scored: &[Scored]) -> Result<MetricsReport> {
    if scored.is_empty() {
        return Err(Error::arg("nothing to aggregate"));
    }
    let has_next = algo.framework() == Framework::Sequential;
    let mut sizes: Vec<usize> = scored.iter().map(|s| s.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut rows = Vec::new();
    for &n in &sizes {
        let mut family_means: [Vec<f64>; 4] = Default::default();
        let mut total = 0;
        for family in Family::ALL {
            let items: Vec<&GraphMetrics> = scored.iter().filter(|s| s.n == n && s.family == family).map(|s| &s.metrics).collect();
            if items.is_empty() {
                continue;
            }
            let cols = [
                items.iter().map(|m| m.next_node_error.unwrap_or(0.0)).collect::<Vec<_>>(),
                items.iter().map(|m| m.key).collect(),
                items.iter().map(|m| m.pred_error).collect(),
                items.iter().map(|m| m.term_accuracy).collect(),
            ];
            let r = row(Some(family), n, items.len(), cols, has_next);
            family_means[0].push(r.next_node_error.map_or(0.0, |s| s.mean));
            family_means[1].push(r.key.mean);
            family_means[2].push(r.pred_error.mean);
            family_means[3].push(r.term_accuracy.mean);
            total += items.len();
            rows.push(r);
        }
        rows.push(row(None, n, total, family_means, has_next));
    }
    Ok(MetricsReport { algo, rows })
}

impl MetricsReport {
    pub fn key_metric(&self) -> &'static str {
        if self.algo == Algorithm::Bfs {
            "key_accuracy"
        } else {
            "key_mse"
        }
    }

    /// The cross-family row at size `n`.
    pub fn summary(&self, n: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.family.is_none() && r.n == n)
    }

    pub fn to_csv(&self) -> String {
        let key = self.key_metric();
        let mut out = format!(
            "algo,family,n,graphs,next_node_error,next_node_error_std,{key},{key}_std,pred_error,pred_error_std,term_accuracy,term_accuracy_std\n"
        );
        for r in &self.rows {
            let next = r.next_node_error.map_or((String::new(), String::new()), |s| (s.mean.to_string(), s.std.to_string()));
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                self.algo,
                r.family.map_or("all", Family::name),
                r.n,
                r.graphs,
                next.0,
                next.1,
                r.key.mean,
                r.key.std,
                r.pred_error.mean,
                r.pred_error.std,
                r.term_accuracy.mean,
                r.term_accuracy.std
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let fmt = |s: Stat| format!("{:.3e} ± {:.1e}", s.mean, s.std);
        let key = if self.algo == Algorithm::Bfs { "Key (acc.)" } else { "Key (MSE)" };
        let header = ["Family", "Size", "Graphs", "Next", key, "Pred.", "Term."];
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.family.map_or("mean".to_string(), |f| f.name().to_string()),
                    r.n.to_string(),
                    r.graphs.to_string(),
                    r.next_node_error.map_or("-".to_string(), fmt),
                    fmt(r.key),
                    fmt(r.pred_error),
                    fmt(r.term_accuracy),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for cells in &body {
            for (w, c) in widths.iter_mut().zip(cells) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: Vec<&str>| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let mut out = format!("### {}\n\n", self.algo);
        out += &line(header.to_vec());
        out += &format!("|{}|\n", widths.iter().map(|&w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|"));
        for cells in &body {
            out += &line(cells.iter().map(String::as_str).collect());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphgen::WeightedGraph;
    use crate::trace::run;

    fn triangle() -> WeightedGraph {
        WeightedGraph::new(4, 0, vec![(0, 1, 0.5), (1, 2, 0.3), (0, 2, 0.9)]).unwrap()
    }

    #[test]
    fn termination_accuracy_formula() {
        assert_eq!(termination_accuracy(5, 5).unwrap(), 1.0);
        assert_eq!(termination_accuracy(2, 4).unwrap(), 0.5);
        assert_eq!(termination_accuracy(8, 4).unwrap(), 0.0);
        assert_eq!(termination_accuracy(13, 4).unwrap(), -1.25);
        assert!(termination_accuracy(3, 0).is_err());
    }

    #[test]
    fn perfect_records_score_perfectly() {
        for algo in Algorithm::ALL {
            let t = run::<f64>(algo, &triangle()).unwrap();
            let r = RolloutRecord::from_trace(&t);
            let m = match algo.framework() {
                Framework::Sequential => sequential_metrics(&r, &r, &t).unwrap(),
                Framework::Parallel => parallel_metrics(&r, &t).unwrap(),
            };
            assert_eq!(m.next_node_error.unwrap_or(0.0), 0.0, "{algo}");
            assert_eq!(m.key, if algo == Algorithm::Bfs { 1.0 } else { 0.0 }, "{algo}");
            assert_eq!(m.pred_error, 0.0);
            assert_eq!(m.term_accuracy, 1.0);
        }
    }

    #[test]
    fn hand_built_counts() {
        assert_eq!(next_node_error(&[0, 1, 3, 2], &[0, 1, 2, 3]).0, 0.5);
        assert_eq!(next_node_error(&[0, 1, 2, 2], &[0, 1, 2, 3]), (0.25, false));
        assert_eq!(next_node_error(&[0, 1], &[0, 2, 3]), (0.5, true));
        assert_eq!(pred_error(&[1, 2, 0], &[Some(0), Some(0), Some(1)]), 1.0);
        assert_eq!(pred_error(&[0, 0, 0], &[Some(0), None, Some(1)]), 0.5);
        assert_eq!(bfs_accuracy(&[0.6, 0.4], &[true, true]), 0.5);
    }

    #[test]
    fn constant_key_offset_gives_squared_mse() {
        let t = run::<f64>(Algorithm::BellmanFord, &triangle()).unwrap();
        let mut r = RolloutRecord::from_trace(&t);
        for k in r.keys.last_mut().unwrap().iter_mut() {
            *k += 0.25;
        }
        let m = parallel_metrics(&r, &t).unwrap();
        assert!((m.key - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn aggregation_over_families() {
        let m = |x: f64| GraphMetrics { next_node_error: Some(x), key: x, pred_error: x, term_accuracy: 1.0, length_mismatch: false };
        let scored: Vec<Scored> = [(Family::Er, 0.1), (Family::Ba, 0.2), (Family::Grid, 0.3)]
            .iter()
            .flat_map(|&(f, x)| (0..2).map(move |_| Scored { family: f, n: 8, metrics: m(x) }))
            .collect();
        let report = aggregate(Algorithm::Dijkstra, &scored).unwrap();
        let s = report.summary(8).unwrap();
        assert!((s.key.mean - 0.2).abs() < 1e-15);
        assert!((s.key.std - (0.02f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.term_accuracy.std, 0.0);
        assert_eq!(s.graphs, 6);
        assert_eq!(report.rows.len(), 4);
        let single = aggregate(Algorithm::Dijkstra, &scored[..1]).unwrap();
        assert_eq!(single.summary(8).unwrap().key, Stat { mean: 0.1, std: 0.0 });
        assert!(aggregate(Algorithm::Dijkstra, &[]).is_err());
        assert!(report.to_csv().lines().count() == 5);
        assert!(report.to_markdown().contains("| mean"));
    }
}
