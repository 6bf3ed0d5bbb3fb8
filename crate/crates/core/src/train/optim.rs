use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub max_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_lr: 2e-3,
            min_lr: 1e-5,
            weight_decay: 1.25e-2,
            betas: (0.9, 0.999),
            eps: 1e-8,
            epochs: 20,
            batch_size: 32,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_lr >= 0.0
            && self.min_lr <= self.max_lr
            && self.max_lr.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.betas.0)
            && (0.0..1.0).contains(&self.betas.1)
            && self.eps > 0.0
            && self.epochs > 0
            && self.batch_size >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

/// Single-cycle cosine from `max_lr` at epoch 0 down to `min_lr` at the last epoch.
pub fn cosine_lr(cfg: &OptimConfig, epoch: usize) -> f64 {
    if cfg.epochs <= 1 {
        return cfg.max_lr;
    }
    let t = epoch.min(cfg.epochs - 1) as f64 / (cfg.epochs - 1) as f64;
    cfg.min_lr + 0.5 * (cfg.max_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * t).cos())
}

struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Adam with decoupled weight decay. Decay applies to matrices and conv
/// kernels only; vectors such as biases and batch-norm affine terms are exempt.
pub struct AdamW<T: Scalar = f32> {
    cfg: OptimConfig,
    step: u64,
    state: HashMap<u64, Moments<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: OptimConfig) -> Self {
        Self {
            cfg,
            step: 0,
            state: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn decays(param: &Var<T>) -> bool {
        param.shape().len() >= 2
    }

    pub fn step(&mut self, params: &[(String, Var<T>)], lr: f64) {
        self.step += 1;
        let (b1, b2) = self.cfg.betas;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let (b1t, b2t) = (T::lit(b1), T::lit(b2));
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(self.cfg.eps);
        let decay = T::lit(1.0 - lr * self.cfg.weight_decay);
        for (_, p) in params {
            let Some(g) = p.grad() else { continue };
            let st = self.state.entry(p.id()).or_insert_with(|| Moments {
                m: vec![T::zero(); g.numel()],
                v: vec![T::zero(); g.numel()],
            });
            let wd = Self::decays(p);
            p.update(|w: &mut Tensor<T>| {
                for (i, x) in w.data_mut().iter_mut().enumerate() {
                    let gi = g.data()[i];
                    st.m[i] = b1t * st.m[i] + (T::one() - b1t) * gi;
                    st.v[i] = b2t * st.v[i] + (T::one() - b2t) * gi * gi;
                    if wd {
                        *x *= decay;
                    }
                    *x -= step_size * st.m[i] / ((st.v[i] * inv_bc2).sqrt() + eps);
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = OptimConfig {
            max_lr: 1e-2,
            min_lr: 1e-4,
            epochs: 20,
            ..OptimConfig::default()
        };
        assert_eq!(cosine_lr(&cfg, 0), 1e-2);
        assert!((cosine_lr(&cfg, 19) - 1e-4).abs() < 1e-18);
        let mid = cosine_lr(&cfg, 5);
        let want = 1e-4 + 0.5 * (1e-2 - 1e-4) * (1.0 + (std::f64::consts::PI * 5.0 / 19.0).cos());
        assert_eq!(mid, want);
        for e in 1..20 {
            assert!(cosine_lr(&cfg, e) < cosine_lr(&cfg, e - 1));
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let p = Var::parameter(Tensor::<f64>::from_vec(vec![1.0, -1.0]));
        p.scale(3.0).unwrap().sum().unwrap().backward().unwrap();
        let mut opt = AdamW::new(OptimConfig::default());
        opt.step(&[("p".into(), p.clone())], 0.1);
        let v = p.to_tensor();
        assert!((v.data()[0] - 0.9).abs() < 1e-9);
        assert!((v.data()[1] + 1.1).abs() < 1e-9);
    }

    #[test]
    fn vectors_skip_decay_with_zero_grad() {
        let gamma = Var::parameter(Tensor::<f64>::from_vec(vec![1.5, 0.5]));
        let w = Var::parameter(Tensor::<f64>::ones([2, 2]));
        for p in [&gamma, &w] {
            p.scale(0.0).unwrap().sum().unwrap().backward().unwrap();
        }
        let mut opt = AdamW::new(OptimConfig {
            weight_decay: 0.5,
            ..OptimConfig::default()
        });
        opt.step(&[("g".into(), gamma.clone()), ("w".into(), w.clone())], 0.1);
        assert_eq!(gamma.to_tensor().data(), &[1.5, 0.5]);
        assert!(w.to_tensor().data().iter().all(|&x| (x - 0.95).abs() < 1e-12));
    }
}
