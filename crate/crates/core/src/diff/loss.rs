//! Loss functions recorded as fused tape nodes.

use std::sync::Arc;

use super::tape::{softmax_rows, Op, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<S: Scalar> Tape<S> {
    fn reduce(&mut self, input: Var, total: S, dloss: Vec<S>) -> Var {
        self.push(Tensor::scalar(total), Op::Reduce { input, dloss })
    }

    fn check_target(&self, pred: Var, target: &Tensor<S>, mask: Option<&[bool]>, what: &str) -> Result<()> {
        let p = self.value(pred);
        if p.len() != target.len() || mask.is_some_and(|m| m.len() != p.len()) {
            return Err(Error::arg(format!("{what}: prediction, target and mask sizes differ")));
        }
        Ok(())
    }

    /// Mean smooth-L1 over all elements.
    pub fn smooth_l1(&mut self, pred: Var, target: &Tensor<S>, beta: S) -> Result<Var> {
        let mask = vec![true; target.len()];
        self.smooth_l1_masked(pred, target, &mask, beta)
    }

    /// Mean smooth-L1 over the elements where `mask` is set (0 when none are).
    pub fn smooth_l1_masked(&mut self, pred: Var, target: &Tensor<S>, mask: &[bool], beta: S) -> Result<Var> {
        if !(beta > S::zero()) {
            return Err(Error::arg("smooth_l1 needs beta > 0"));
        }
        self.check_target(pred, target, Some(mask), "smooth_l1")?;
        let count = mask.iter().filter(|&&m| m).count();
        let norm = S::one() / S::lit(count.max(1) as f64);
        let half = S::lit(0.5);
        let mut total = S::zero();
        let mut dloss = vec![S::zero(); mask.len()];
        for (i, (&p, &t)) in self.value(pred).data().iter().zip(target.data()).enumerate() {
            if !mask[i] {
                continue;
            }
            let (l, d) = smooth_l1_element(p - t, beta, half);
            total += l;
            dloss[i] = d * norm;
        }
        Ok(self.reduce(pred, total * norm, dloss))
    }

    /// Mean binary cross entropy on logits over masked elements; targets in `[0, 1]`.
    pub fn bce_logits(&mut self, logit: Var, target: &Tensor<S>, mask: &[bool]) -> Result<Var> {
        self.check_target(logit, target, Some(mask), "bce")?;
        let count = mask.iter().filter(|&&m| m).count();
        let norm = S::one() / S::lit(count.max(1) as f64);
        let mut total = S::zero();
        let mut dloss = vec![S::zero(); mask.len()];
        for (i, (&z, &y)) in self.value(logit).data().iter().zip(target.data()).enumerate() {
            if !mask[i] {
                continue;
            }
            total += z.max(S::zero()) - z * y + (S::one() + (-z.abs()).exp()).ln();
            dloss[i] = (sigmoid(z) - y) * norm;
        }
        Ok(self.reduce(logit, total * norm, dloss))
    }

    /// Mean over rows with a target of `-log softmax(logits)[target]`, where the
    /// softmax only spans the row's masked entries.
    pub fn masked_softmax_ce(&mut self, logits: Var, mask: Arc<[bool]>, targets: &[Option<usize>]) -> Result<Var> {
        let (r, k) = self.value(logits).dims();
        if mask.len() != r * k || targets.len() != r {
            return Err(Error::arg("masked_softmax_ce: mask or target shape"));
        }
        for (row, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= k || !mask[row * k + t] {
                    return Err(Error::arg(format!("target {t} of row {row} lies outside the mask")));
                }
            }
        }
        // Rows without a target may be fully masked; give them a dummy admissible entry.
        let mut safe_mask = mask.to_vec();
        for (row, t) in targets.iter().enumerate() {
            if t.is_none() && !safe_mask[row * k..(row + 1) * k].iter().any(|&m| m) {
                safe_mask[row * k] = true;
            }
        }
        let probs = softmax_rows(self.value(logits), &safe_mask, r, k)?;
        let count = targets.iter().filter(|t| t.is_some()).count();
        let norm = S::one() / S::lit(count.max(1) as f64);
        let mut total = S::zero();
        let mut dloss = vec![S::zero(); r * k];
        for (row, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let p = &probs.data()[row * k..(row + 1) * k];
            total -= p[t].ln();
            for j in 0..k {
                if mask[row * k + j] {
                    let onehot = if j == t { S::one() } else { S::zero() };
                    dloss[row * k + j] = (p[j] - onehot) * norm;
                }
            }
        }
        Ok(self.reduce(logits, total * norm, dloss))
    }
}

fn smooth_l1_element<S: Scalar>(x: S, beta: S, half: S) -> (S, S) {
    if x.abs() < beta {
        (half * x * x / beta, x / beta)
    } else {
        (x.abs() - half * beta, x.signum())
    }
}

pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}
