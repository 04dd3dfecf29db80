//! Adam with decoupled weight decay.

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moment estimates for one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &Params) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// `p ← p − lr·(m̂ / (√v̂ + ε) + wd·p)`.
    pub fn update(&mut self, params: &mut Params, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let names: Vec<String> = params.names().to_vec();
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            grads[i].same_shape(p, &names[i])?;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads[i].data();
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let mk = &mut m.data_mut()[k];
                *mk = c.beta1 * *mk + (1.0 - c.beta1) * g[k];
                let vk = &mut v.data_mut()[k];
                *vk = c.beta2 * *vk + (1.0 - c.beta2) * g[k] * g[k];
                let adam = (*mk / bc1) / ((*vk / bc2).sqrt() + c.eps);
                *w -= c.learning_rate * (adam + c.weight_decay * *w);
            }
        }
        Ok(())
    }

    /// Moment tensors in parameter order (first, then second).
    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn restore(config: AdamWConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>, params: &Params) -> Result<Self> {
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        for ((a, b), p) in m.iter().zip(&v).zip(params.tensors()) {
            a.same_shape(p, "first moment")?;
            b.same_shape(p, "second moment")?;
        }
        Ok(Self { config, step, m, v })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Params {
        let mut p = Params::new();
        p.insert("a", Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
        p
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = params();
        let mut opt = AdamW::new(AdamWConfig::with_lr(0.1), &p);
        opt.update(&mut p, &[Tensor::zeros(1, 3)]).unwrap();
        for (got, orig) in p.get("a").data().iter().zip(params().get("a").data()) {
            assert!((got - orig * 0.999).abs() < 1e-15);
        }

        let mut p = params();
        let mut cfg = AdamWConfig::with_lr(0.1);
        cfg.weight_decay = 0.0;
        let mut opt = AdamW::new(cfg, &p);
        opt.update(&mut p, &[Tensor::zeros(1, 3)]).unwrap();
        assert_eq!(p, params());
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = params();
        let mut opt = AdamW::new(AdamWConfig::with_lr(0.0), &p);
        opt.update(&mut p, &[Tensor::filled(1, 3, 3.0)]).unwrap();
        assert_eq!(p, params());
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut p = params();
        let mut cfg = AdamWConfig::with_lr(0.01);
        cfg.weight_decay = 0.0;
        let mut opt = AdamW::new(cfg, &p);
        let g = Tensor::from_vec(1, 3, vec![4.0, -0.3, 1e-3]).unwrap();
        opt.update(&mut p, &[g.clone()]).unwrap();
        for k in 0..3 {
            let moved = p.get("a").data()[k] - params().get("a").data()[k];
            let expect = -0.01 * g.data()[k] / (g.data()[k].abs() + 1e-8);
            assert!((moved - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = params();
        let mut opt = AdamW::new(AdamWConfig::with_lr(0.05), &p);
        for _ in 0..2000 {
            let g = p.get("a").map(|x| 2.0 * (x - 3.0));
            opt.update(&mut p, &[g]).unwrap();
        }
        assert!(p.get("a").data().iter().all(|&x| (x - 3.0).abs() < 0.1));
        assert!(opt.update(&mut p, &[]).is_err());
    }
}
