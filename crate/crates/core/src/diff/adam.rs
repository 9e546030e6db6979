use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.0005, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, params: &[Tensor<S>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Adam { config, step: 0, first: zeros(), second: zeros() }
    }

    /// Applies one update to every parameter whose `trainable` flag is set.
    /// Frozen parameters and their moments are left untouched.
    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>], trainable: &[bool]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() || trainable.len() != params.len() {
            return Err(Error::arg("Adam: parameter, gradient and flag counts differ"));
        }
        if params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::arg("Adam: gradient shape differs from parameter"));
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let lr = S::lit(c.lr);
        let eps = S::lit(c.eps);
        let t = self.step as i32;
        let correction1 = S::one() - b1.powi(t);
        let correction2 = S::one() - b2.powi(t);
        for (i, param) in params.iter_mut().enumerate() {
            if !trainable[i] {
                continue;
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (p, &g)) in param.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[j] = b1 * m[j] + (S::one() - b1) * g;
                v[j] = b2 * v[j] + (S::one() - b2) * g * g;
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::<f64>::row(vec![0.3, -1.2])];
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            adam.step(&mut p, &[Tensor::zeros(vec![1, 2])], &[true]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_closed_form() {
        // m_hat = g and v_hat = g^2 after one step, so the update is lr * g / (|g| + eps).
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let g = [0.5, -2.0, 1e-3];
        let mut p = vec![Tensor::<f64>::row(vec![1.0, 1.0, 1.0])];
        let mut adam = Adam::new(cfg, &p);
        adam.step(&mut p, &[Tensor::row(g.to_vec())], &[true]).unwrap();
        for (j, &gj) in g.iter().enumerate() {
            let expected = 1.0 - 0.01 * gj / (gj.abs() + 1e-8);
            assert!((p[0].data()[j] - expected).abs() < 1e-12, "{j}");
        }
    }

    #[test]
    fn minimises_quadratic() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut p = vec![Tensor::<f64>::scalar(1.0)];
        let mut adam = Adam::new(cfg, &p);
        for _ in 0..200 {
            let g = Tensor::scalar(2.0 * p[0].item());
            adam.step(&mut p, &[g], &[true]).unwrap();
        }
        assert!(p[0].item().abs() < 0.1, "{}", p[0].item());
    }

    #[test]
    fn frozen_params_untouched() {
        let mut p = vec![Tensor::<f64>::scalar(1.0), Tensor::scalar(2.0)];
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Tensor::scalar(1.0), Tensor::scalar(1.0)], &[true, false]).unwrap();
        assert!(p[0].item() < 1.0);
        assert_eq!(p[1].item(), 2.0);
    }
}
