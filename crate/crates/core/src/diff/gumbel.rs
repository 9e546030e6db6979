//! Gumbel-softmax sampling with a straight-through hard sample.

use std::sync::Arc;

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub struct GumbelSample {
    /// Arg-max of the perturbed logits.
    pub index: usize,
    /// Tempered softmax of the perturbed logits.
    pub soft: Var,
    /// One-hot of `index`; its gradient flows into `soft`.
    pub hard: Var,
}

/// Standard Gumbel noise `-ln(-ln(u))` for admissible entries, 0 elsewhere.
pub fn gumbel_noise<S: Scalar>(mask: &[bool], rng: &mut impl Rng) -> Vec<S> {
    mask.iter()
        .map(|&m| {
            if !m {
                return S::zero();
            }
            let mut u: f64 = rng.gen();
            while u <= 0.0 {
                u = rng.gen();
            }
            S::lit(-(-u.ln()).ln())
        })
        .collect()
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

/// Gumbel-max draw from `softmax(logits)` restricted to `mask`.
pub fn sample_index<S: Scalar>(logits: &[S], mask: &[bool], rng: &mut impl Rng) -> Result<usize> {
    if logits.len() != mask.len() {
        return Err(Error::arg("logits and mask lengths differ"));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::arg("cannot sample with every entry masked"));
    }
    let noise = gumbel_noise::<S>(mask, rng);
    let noisy: Vec<S> = logits.iter().zip(&noise).map(|(&l, &g)| l + g).collect();
    Ok(masked_argmax(&noisy, mask).expect("mask admits an entry"))
}

/// Draws a straight-through Gumbel-softmax sample from a `1 x k` row of logits.
pub fn gumbel_softmax_sample<S: Scalar>(
    tape: &mut Tape<S>,
    logits: Var,
    mask: &[bool],
    temperature: S,
    rng: &mut impl Rng,
) -> Result<GumbelSample> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::arg("cannot sample with every entry masked"));
    }
    let noise = gumbel_noise::<S>(mask, rng);
    gumbel_softmax_with_noise(tape, logits, mask, &noise, temperature)
}

/// Same as [`gumbel_softmax_sample`] with caller-supplied noise.
pub fn gumbel_softmax_with_noise<S: Scalar>(
    tape: &mut Tape<S>,
    logits: Var,
    mask: &[bool],
    noise: &[S],
    temperature: S,
) -> Result<GumbelSample> {
    if !(temperature > S::zero()) {
        return Err(Error::arg("Gumbel temperature must be positive"));
    }
    let k = tape.value(logits).len();
    if mask.len() != k || noise.len() != k || tape.value(logits).rows() != 1 {
        return Err(Error::arg("Gumbel sampling needs a 1 x k row with matching mask and noise"));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::arg("cannot sample with every entry masked"));
    }
    let noise_var = tape.constant(Tensor::row(noise.to_vec()));
    let noisy = tape.add(logits, noise_var)?;
    let index = masked_argmax(tape.value(noisy).data(), mask).expect("mask admits an entry");
    let scaled = tape.scale(noisy, S::one() / temperature);
    let soft = tape.masked_softmax(scaled, Arc::from(mask.to_vec()))?;
    let hard = tape.straight_through(soft, &[index])?;
    Ok(GumbelSample { index, soft, hard })
}
