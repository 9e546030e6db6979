//! Helpers shared by the integration tests.
#![allow(dead_code)]

use algoexec::diff::{grad_check_at, GradCheckReport, Tape, Tensor};
use algoexec::executor::{init_params, Arch, Bound, ExecutorParams, GraphContext, ModelConfig};
use algoexec::graphgen::{generate_graph, DatasetSpec, Family};
use algoexec::trace::{run, Algorithm, Trace};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Teacher-forced loss of step `t` (every head of the task) from hidden state `h0`, with its gradients.
pub fn step_loss(params: &ExecutorParams<f64>, trace: &Trace<f64>, t: usize, h0: &Tensor<f64>) -> algoexec::Result<(f64, Vec<Tensor<f64>>)> {
    let ctx = GraphContext::new(&trace.graph);
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, params, &ctx);
    let h = tape.constant(h0.clone());
    let (loss, _) = b.teacher_forced_step(&mut tape, 0, trace, t, h, None)?;
    let g = tape.backward(loss)?;
    Ok((tape.scalar_value(loss), b.parameter_gradients(&g)))
}

/// Finite-difference check of one step loss on a 6-node ER graph with a
/// random step and random hidden state. `per_tensor` caps the entries
/// checked in each tensor (`None` checks all).
pub fn step_gradient_check(arch: Arch, algo: Algorithm, seed: u64, per_tensor: Option<usize>) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = generate_graph(&DatasetSpec::new(Family::Er, 6, 1, seed), 0).unwrap();
    let trace = run::<f64>(algo, &g).unwrap();
    let params = init_params::<f64>(&ModelConfig::new(arch, vec![algo]), seed).unwrap();
    let t = rng.gen_range(0..trace.termination);
    let l = params.config.hidden;
    let h0 = Tensor::matrix(6, l, (0..6 * l).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let (_, analytic) = step_loss(&params, &trace, t, &h0).unwrap();
    let mut coords = Vec::new();
    for (i, p) in params.store.tensors().iter().enumerate() {
        match per_tensor {
            Some(k) if p.len() > k => coords.extend(sample(&mut rng, p.len(), k).into_iter().map(|j| (i, j))),
            _ => coords.extend((0..p.len()).map(|j| (i, j))),
        }
    }
    grad_check_at(
        params.store.tensors(),
        &analytic,
        |probe| {
            let mut p = params.clone();
            p.store.tensors_mut().clone_from_slice(probe);
            Ok(step_loss(&p, &trace, t, &h0)?.0)
        },
        1e-5,
        &coords,
    )
    .unwrap()
}
