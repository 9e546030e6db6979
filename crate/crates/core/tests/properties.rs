use algoexec::diff::{Tape, Tensor};
use algoexec::executor::{features, init_params, Arch, Bound, GraphContext, ModelConfig, NaExample};
use algoexec::graphgen::{generate_graph, DatasetSpec, Family, WeightedGraph};
use algoexec::metrics::{pred_error, termination_accuracy};
use algoexec::regimes::{
    apply_transfer, train_multitask, train_na, train_tf, NaObjective, Regime, RegimeConfig, TrajectoryAggregate, TransferMode,
};
use algoexec::trace::{run, Algorithm, Framework, Trace};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random simple graph, possibly disconnected, with weights in [0.2, 1].
fn arbitrary_graph(n: usize, density: f64, seed: u64) -> WeightedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < density {
                edges.push((u, v, rng.gen_range(0.2..=1.0)));
            }
        }
    }
    WeightedGraph::new(n, rng.gen_range(0..n), edges).unwrap()
}

fn graphs() -> impl Strategy<Value = WeightedGraph> {
    prop_oneof![
        (2usize..14, 0.1f64..0.9, any::<u64>()).prop_map(|(n, d, s)| arbitrary_graph(n, d, s)),
        (0usize..3, 4usize..16, any::<u64>()).prop_map(|(f, n, s)| generate_graph(&DatasetSpec::new(Family::ALL[f], n, 1, s), 0).unwrap()),
    ]
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        p.swap(i, rng.gen_range(0..=i));
    }
    p
}

fn kruskal_weight(g: &WeightedGraph, include: &[bool]) -> f64 {
    let mut parent: Vec<usize> = (0..g.n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    let mut edges: Vec<_> = g.edges.iter().filter(|e| include[e.0] && include[e.1]).collect();
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut total = 0.0;
    for &(u, v, w) in edges {
        let (a, b) = (find(&mut parent, u), find(&mut parent, v));
        if a != b {
            parent[a] = b;
            total += w;
        }
    }
    total
}

fn weight_of(g: &WeightedGraph, u: usize, v: usize) -> f64 {
    g.edges.iter().find(|e| (e.0, e.1) == (u.min(v), u.max(v))).expect("pred edge exists").2
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn traces_are_deterministic(g in graphs(), a in 0usize..9) {
        let algo = Algorithm::ALL[a];
        prop_assert_eq!(run::<f64>(algo, &g).unwrap(), run::<f64>(algo, &g).unwrap());
    }

    #[test]
    fn sequential_and_parallel_versions_agree(g in graphs()) {
        for (seq, par) in [
            (Algorithm::Dijkstra, Algorithm::BellmanFord),
            (Algorithm::WidestSeq, Algorithm::WidestPar),
            (Algorithm::ReliableSeq, Algorithm::ReliablePar),
        ] {
            let (ks, _) = run::<f64>(seq, &g).unwrap().final_output();
            let (kp, _) = run::<f64>(par, &g).unwrap().final_output();
            for (a, b) in ks.iter().zip(&kp) {
                match (a, b) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12, "{seq} {a} vs {par} {b}"),
                    (None, None) => {}
                    _ => prop_assert!(false, "{seq}/{par} disagree on reachability"),
                }
            }
        }
    }

    #[test]
    fn reachability_agrees_across_algorithms(g in graphs()) {
        let reach = run::<f64>(Algorithm::Bfs, &g).unwrap().reachable();
        for algo in Algorithm::ALL {
            prop_assert_eq!(&run::<f64>(algo, &g).unwrap().reachable(), &reach, "{}", algo);
        }
    }

    #[test]
    fn prim_builds_a_minimum_spanning_tree(g in graphs()) {
        let t = run::<f64>(Algorithm::Prim, &g).unwrap();
        let reach = t.reachable();
        let (_, preds) = t.final_output();
        let mut weight = 0.0;
        for (v, p) in preds.iter().enumerate() {
            if let Some(p) = *p {
                if p != v {
                    prop_assert!(reach[p]);
                    weight += weight_of(&g, p, v);
                }
            }
        }
        prop_assert_eq!(preds[g.source], Some(g.source));
        prop_assert!((weight - kruskal_weight(&g, &reach)).abs() <= 1e-12);
    }

    #[test]
    fn sequential_pops_are_monotone(g in graphs()) {
        for algo in [Algorithm::Dijkstra, Algorithm::WidestSeq, Algorithm::ReliableSeq] {
            let t = run::<f64>(algo, &g).unwrap();
            let (keys, _) = t.final_output();
            let popped: Vec<f64> = t.pop_sequence.iter().map(|&u| keys[u].unwrap()).collect();
            for w in popped.windows(2) {
                if algo.maximises() {
                    prop_assert!(w[1] <= w[0] + 1e-15, "{algo}: {popped:?}");
                } else {
                    prop_assert!(w[1] + 1e-15 >= w[0], "{algo}: {popped:?}");
                }
            }
            let mut seen = vec![false; g.n];
            for &u in &t.pop_sequence {
                prop_assert!(!seen[u]);
                seen[u] = true;
            }
        }
    }

    #[test]
    fn trace_relabels_with_the_graph(g in graphs(), s in any::<u64>(), a in 0usize..9) {
        let algo = Algorithm::ALL[a];
        // DFS keys come from the index-ordered tie-break, so they do not relabel.
        prop_assume!(!matches!(algo, Algorithm::Dfs));
        let perm = permutation(g.n, s);
        let t = run::<f64>(algo, &g).unwrap();
        let tp = run::<f64>(algo, &g.permuted(&perm).unwrap()).unwrap();
        let (k, _) = t.final_output();
        let (kp, _) = tp.final_output();
        for v in 0..g.n {
            prop_assert_eq!(k[v].map(f64::to_bits), kp[perm[v]].map(f64::to_bits));
        }
        prop_assert_eq!(t.termination, tp.termination);
    }

    #[test]
    fn termination_accuracy_is_one_only_when_exact(p in 0usize..50, t in 1usize..50) {
        let acc = termination_accuracy(p, t).unwrap();
        prop_assert!(acc <= 1.0);
        prop_assert_eq!(acc == 1.0, p == t);
    }

    #[test]
    fn pred_error_ignores_relabeling(g in graphs(), s in any::<u64>(), noise in any::<u64>()) {
        let t = run::<f64>(Algorithm::Dijkstra, &g).unwrap();
        let (_, truth) = t.final_output();
        let mut rng = ChaCha8Rng::seed_from_u64(noise);
        let predicted: Vec<usize> = (0..g.n).map(|_| rng.gen_range(0..g.n)).collect();
        let perm = permutation(g.n, s);
        let mut p2 = vec![0; g.n];
        let mut t2 = vec![None; g.n];
        for v in 0..g.n {
            p2[perm[v]] = perm[predicted[v]];
            t2[perm[v]] = truth[v].map(|u| perm[u]);
        }
        let e = pred_error(&predicted, &truth);
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert_eq!(e, pred_error(&p2, &t2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Relabelling nodes permutes every per-node output; the max aggregator and
    /// per-row products make this exact.
    #[test]
    fn executor_step_is_permutation_equivariant(g in graphs(), s in any::<u64>(), nepp in any::<bool>(), a in 0usize..9) {
        let algo = Algorithm::ALL[a];
        let arch = if nepp { Arch::NePlusPlus } else { Arch::Ne };
        let params = init_params::<f64>(&ModelConfig::new(arch, vec![algo]), s).unwrap();
        let trace = run::<f64>(algo, &g).unwrap();
        let perm = permutation(g.n, s ^ 1);
        let gp = g.permuted(&perm).unwrap();
        let t = trace.termination.min(1);
        let x = features(algo, g.source, &trace.steps[t]);
        let mut xp = x.clone();
        for v in 0..g.n {
            for j in 0..x.cols() {
                xp.data_mut()[perm[v] * x.cols() + j] = x.at(v, j);
            }
        }
        let outputs = |graph: &WeightedGraph, x: &Tensor<f64>| {
            let ctx = GraphContext::new(graph);
            let mut tape = Tape::new();
            let bound = Bound::new(&mut tape, &params, &ctx);
            let x = tape.constant(x.clone());
            let h = bound.zero_hidden(&mut tape);
            let o = bound.step(&mut tape, 0, x, h).unwrap();
            let next = o.next_logits.map(|v| tape.value(v).clone());
            (tape.value(o.decoded).clone(), tape.value(o.hidden).clone(), tape.value(o.pred_logits).clone(), next, tape.value(o.term_logit).item(), ctx.pred_mask.clone())
        };
        let (d, h, pl, nl, term, mask) = outputs(&g, &x);
        let (dp, hp, plp, nlp, termp, _) = outputs(&gp, &xp);
        let n = g.n;
        for v in 0..n {
            for j in 0..d.cols() {
                prop_assert_eq!(d.at(v, j).to_bits(), dp.at(perm[v], j).to_bits());
            }
            for j in 0..h.cols() {
                prop_assert_eq!(h.at(v, j).to_bits(), hp.at(perm[v], j).to_bits());
            }
            for u in 0..n {
                if mask[v * n + u] {
                    prop_assert_eq!(pl.at(v, u).to_bits(), plp.at(perm[v], perm[u]).to_bits());
                }
            }
            if let (Some(a), Some(b)) = (&nl, &nlp) {
                prop_assert_eq!(a.at(0, v).to_bits(), b.at(0, perm[v]).to_bits());
            }
        }
        prop_assert_eq!(term.to_bits(), termp.to_bits());
    }
}

fn small_set(algo: Algorithm, count: usize, seed: u64) -> Vec<Trace<f64>> {
    (0..count)
        .map(|i| {
            let spec = DatasetSpec::new(Family::ALL[i % 3], 6, count, seed);
            run(algo, &generate_graph(&spec, i).unwrap()).unwrap()
        })
        .collect()
}

fn quick(regime: Regime, target: Algorithm) -> RegimeConfig {
    let mut cfg = RegimeConfig::new(regime, target);
    cfg.batch = 4;
    cfg.max_epochs = 3;
    cfg.trajectories = 3;
    cfg.seed = 5;
    cfg
}

#[test]
fn fixed_seed_gives_identical_loss_trajectories() {
    let traces = small_set(Algorithm::Dijkstra, 10, 1);
    let examples: Vec<_> = traces.iter().map(NaExample::from_trace).collect();
    let config = ModelConfig::new(Arch::NePlusPlus, vec![Algorithm::Dijkstra]);
    let tf = || {
        let mut p = init_params::<f64>(&config, 3).unwrap();
        (train_tf(&mut p, Algorithm::Dijkstra, &traces, &quick(Regime::Tf, Algorithm::Dijkstra)).unwrap(), p)
    };
    let na = || {
        let mut p = init_params::<f64>(&config, 3).unwrap();
        (train_na(&mut p, Algorithm::Dijkstra, &examples, &quick(Regime::Na, Algorithm::Dijkstra)).unwrap(), p)
    };
    assert_eq!(tf(), tf());
    assert_eq!(na(), na());
}

#[test]
fn best_of_k_is_monotone_and_below_mean() {
    let traces = small_set(Algorithm::Dijkstra, 6, 2);
    let examples: Vec<_> = traces.iter().map(NaExample::from_trace).collect();
    let params = init_params::<f64>(&ModelConfig::new(Arch::Ne, vec![Algorithm::Dijkstra]), 1).unwrap();
    for item in 0..examples.len() {
        let objective = |k| NaObjective {
            task: 0,
            train: &examples[..],
            val: &examples[..0],
            trajectories: k,
            aggregate: TrajectoryAggregate::Best,
            temperature: 1.0,
            selection_bce: false,
            seed: 9,
        };
        let all = objective(10).trajectory_losses(&params, item, 0).unwrap();
        let mut best = f64::INFINITY;
        for k in 1..=10 {
            let prefix = objective(k).trajectory_losses(&params, item, 0).unwrap();
            assert_eq!(prefix[..], all[..k], "draws are nested across k");
            let next = prefix.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(next <= best);
            best = next;
        }
        assert!(best <= all.iter().sum::<f64>() / 10.0);
    }
}

#[test]
fn frozen_processors_survive_training_bitwise() {
    let base = small_set(Algorithm::Prim, 8, 3);
    let target = small_set(Algorithm::Dijkstra, 8, 4);
    let examples: Vec<_> = target.iter().map(NaExample::from_trace).collect();
    for arch in [Arch::Ne, Arch::NePlusPlus] {
        let mut pre = init_params::<f64>(&ModelConfig::new(arch, vec![Algorithm::Prim]), 0).unwrap();
        train_tf(&mut pre, Algorithm::Prim, &base, &quick(Regime::Tf, Algorithm::Prim)).unwrap();
        for mode in [TransferMode::Freeze, TransferMode::TwoProcessors, TransferMode::Finetune] {
            let mut p = apply_transfer(&pre, mode, Algorithm::Dijkstra, arch, 1).unwrap();
            let frozen: Vec<_> = p.processor_params(0).iter().map(|id| p.store.get(*id).clone()).collect();
            train_na(&mut p, Algorithm::Dijkstra, &examples, &quick(Regime::Na, Algorithm::Dijkstra)).unwrap();
            let after: Vec<_> = p.processor_params(0).iter().map(|id| p.store.get(*id).clone()).collect();
            assert_eq!(frozen == after, mode != TransferMode::Finetune, "{arch} {mode:?}");
        }
    }
}

#[test]
fn multitask_without_base_loss_is_plain_na() {
    let base = small_set(Algorithm::Prim, 8, 5);
    let target = small_set(Algorithm::Dijkstra, 8, 6);
    let examples: Vec<_> = target.iter().map(NaExample::from_trace).collect();
    let config = ModelConfig::new(Arch::NePlusPlus, vec![Algorithm::Prim, Algorithm::Dijkstra]);
    let mut cfg = quick(Regime::Multitask, Algorithm::Dijkstra);
    cfg.base = Some(Algorithm::Prim);
    cfg.base_loss = false;
    let mut a = init_params::<f64>(&config, 2).unwrap();
    let ra = train_multitask(&mut a, Algorithm::Prim, &base, Algorithm::Dijkstra, &examples, &cfg).unwrap();
    let mut b = init_params::<f64>(&config, 2).unwrap();
    let rb = train_na(&mut b, Algorithm::Dijkstra, &examples, &cfg).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a, b);
    cfg.base_loss = true;
    let mut c = init_params::<f64>(&config, 2).unwrap();
    let rc = train_multitask(&mut c, Algorithm::Prim, &base, Algorithm::Dijkstra, &examples, &cfg).unwrap();
    assert_ne!(rc.train_loss, ra.train_loss);
}

#[test]
fn multitask_gradients_reach_only_the_own_encoder() {
    let g = generate_graph(&DatasetSpec::new(Family::Er, 7, 1, 3), 0).unwrap();
    let config = ModelConfig::new(Arch::NePlusPlus, vec![Algorithm::Prim, Algorithm::Dijkstra]);
    let params = init_params::<f64>(&config, 4).unwrap();
    let ctx = GraphContext::new(&g);
    for (task, algo) in config.tasks.iter().enumerate() {
        let trace = run::<f64>(*algo, &g).unwrap();
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &params, &ctx);
        let (loss, _) = bound.teacher_forced(&mut tape, task, &trace).unwrap();
        let grads = bound.parameter_gradients(&tape.backward(loss).unwrap());
        let other = params.encoder_params(config.tasks[1 - task]);
        let own = params.encoder_params(*algo);
        for id in other {
            assert!(grads[id.0].data().iter().all(|&x| x == 0.0));
        }
        assert!(own.iter().any(|id| grads[id.0].data().iter().any(|&x| x != 0.0)));
        let proc_grad: f64 = params.processor_params(0).iter().map(|id| grads[id.0].data().iter().map(|x| x.abs()).sum::<f64>()).sum();
        assert!(proc_grad > 0.0, "shared processor receives {algo} gradients");
    }
    assert_eq!(Algorithm::Prim.framework(), Framework::Sequential);
}
