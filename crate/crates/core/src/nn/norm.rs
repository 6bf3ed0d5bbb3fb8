use std::sync::atomic::{AtomicBool, Ordering};

use super::{join, Buffer, Layer, Mode, Visitor};
use crate::analytics::{CostRow, LayerKind};
use crate::autograd::{no_grad, Var};
use crate::error::Result;
use crate::kernels::Chw;
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `[n, c, h, w]` activations.
///
/// Train mode normalizes with batch statistics and folds them into the running
/// estimates (unbiased variance); eval mode uses the running estimates only.
pub struct BatchNorm<T: Scalar = f32> {
    pub gamma: Var<T>,
    pub beta: Var<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    pub eps: f64,
    pub momentum: f64,
    training: AtomicBool,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_params(
            Tensor::ones([channels]),
            Tensor::zeros([channels]),
            Tensor::zeros([channels]),
            Tensor::ones([channels]),
        )
    }

    pub fn with_params(gamma: Tensor<T>, beta: Tensor<T>, mean: Tensor<T>, var: Tensor<T>) -> Self {
        Self {
            gamma: Var::parameter(gamma),
            beta: Var::parameter(beta),
            running_mean: Buffer::new(mean),
            running_var: Buffer::new(var),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            training: AtomicBool::new(false),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn mode(&self) -> Mode {
        if self.training.load(Ordering::Relaxed) {
            Mode::Train
        } else {
            Mode::Eval
        }
    }

    pub fn set_mode(&self, mode: Mode) {
        self.training.store(mode == Mode::Train, Ordering::Relaxed);
    }

    /// Per-channel `(scale, shift)` such that eval output is `scale * x + shift`.
    pub fn affine(&self) -> (Vec<T>, Vec<T>) {
        let (g, b) = (self.gamma.value(), self.beta.value());
        let (m, v) = (self.running_mean.value(), self.running_var.value());
        let scale: Vec<T> = g
            .data()
            .iter()
            .zip(v.data())
            .map(|(&g, &v)| g / (v + T::lit(self.eps)).sqrt())
            .collect();
        let shift = b
            .data()
            .iter()
            .zip(m.data())
            .zip(&scale)
            .map(|((&b, &m), &s)| b - m * s)
            .collect();
        (scale, shift)
    }
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        match self.mode() {
            Mode::Eval => x.batch_norm_eval(
                &self.gamma,
                &self.beta,
                &self.running_mean.value(),
                &self.running_var.value(),
                self.eps,
            ),
            Mode::Train => {
                let (y, mean, var) = x.batch_norm_train(&self.gamma, &self.beta, self.eps)?;
                let (n, _, h, w) = x.value().dims4()?;
                let m = (n * h * w) as f64;
                let mom = T::lit(self.momentum);
                let keep = T::one() - mom;
                let unbias = T::lit(m / (m - 1.0));
                no_grad(|| {
                    let rm = Tensor::from_fn([mean.len()], |i| {
                        keep * self.running_mean.value().data()[i] + mom * mean[i]
                    });
                    let rv = Tensor::from_fn([var.len()], |i| {
                        keep * self.running_var.value().data()[i] + mom * var[i] * unbias
                    });
                    self.running_mean.set(rm)?;
                    self.running_var.set(rv)
                })?;
                Ok(y)
            }
        }
    }

    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>) {
        v.norm(prefix, self);
        v.param(&join(prefix, "weight"), &self.gamma);
        v.param(&join(prefix, "bias"), &self.beta);
        v.buffer(&join(prefix, "running_mean"), &self.running_mean);
        v.buffer(&join(prefix, "running_var"), &self.running_var);
    }

    fn cost(&self, prefix: &str, input: Chw, rows: &mut Vec<CostRow>) -> Result<Chw> {
        let c = self.channels() as u64;
        rows.push(CostRow {
            path: prefix.to_string(),
            kind: LayerKind::BatchNorm,
            params: 2 * c,
            buffers: 2 * c,
            flops: 0,
            param_ids: vec![(self.gamma.id(), c), (self.beta.id(), c)],
        });
        Ok(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input() -> Tensor<f64> {
        Tensor::from_fn([3, 2, 2, 2], |i| ((i * 7 % 11) as f64 - 5.0) * 0.3)
    }

    #[test]
    fn eval_identity_with_unit_stats() {
        let bn = BatchNorm::<f64>::new(2);
        let x = input();
        let y = bn.forward(&Var::constant(x.clone())).unwrap().to_tensor();
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * k).abs() < 1e-12);
        }
        assert!(y.max_abs_diff(&x).unwrap() < 1e-4);
    }

    #[test]
    fn eval_zero_gamma_gives_beta() {
        let bn = BatchNorm::<f64>::with_params(
            Tensor::zeros([2]),
            Tensor::full([2], 5.0),
            Tensor::zeros([2]),
            Tensor::ones([2]),
        );
        let y = bn.forward(&Var::constant(input())).unwrap().to_tensor();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn train_stats_match_two_pass_oracle() {
        let bn = BatchNorm::<f64>::new(2);
        bn.set_mode(Mode::Train);
        let x = input();
        let y = bn.forward(&Var::constant(x.clone())).unwrap().to_tensor();
        // two-pass reference per channel
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| {
                    let base = (b * 2 + ch) * 4;
                    x.data()[base..base + 4].to_vec()
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            for b in 0..3 {
                for j in 0..4 {
                    let i = (b * 2 + ch) * 4 + j;
                    let want = (x.data()[i] - mean) / (var + BN_EPS).sqrt();
                    assert!((y.data()[i] - want).abs() < 1e-12);
                }
            }
            let unbiased = var * 12.0 / 11.0;
            let rm = bn.running_mean.value().data()[ch];
            let rv = bn.running_var.value().data()[ch];
            assert!((rm - 0.1 * mean).abs() < 1e-12);
            assert!((rv - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_rejects_single_value() {
        let bn = BatchNorm::<f64>::new(2);
        bn.set_mode(Mode::Train);
        let x = Var::constant(Tensor::zeros([1, 2, 1, 1]));
        assert!(bn.forward(&x).is_err());
    }
}
