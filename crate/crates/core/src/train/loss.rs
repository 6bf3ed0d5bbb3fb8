use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy<T: Scalar>(logits: &Var<T>, labels: &[usize]) -> Result<Var<T>> {
    logits.log_softmax_lastdim()?.nll(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdParams {
    pub alpha: f64,
    pub temperature: f64,
}

impl Default for KdParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            temperature: 2.0,
        }
    }
}

impl KdParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Batch-mean `KL(softmax(teacher/T) ‖ softmax(student/T))`. The teacher is detached.
pub fn distillation_kl<T: Scalar>(student: &Var<T>, teacher: &Var<T>, temperature: f64) -> Result<Var<T>> {
    if student.shape() != teacher.shape() || student.shape().len() != 2 {
        return Err(Error::shape("kd_loss", &student.shape(), &teacher.shape()));
    }
    let n = student.shape()[0];
    let inv_t = 1.0 / temperature;
    let log_q = student.scale(inv_t)?.log_softmax_lastdim()?;
    // same ops as the student path, so equal logits give a difference of exactly zero
    let log_p = teacher.detach().scale(inv_t)?.log_softmax_lastdim()?.detach();
    let p = Var::constant(log_p.value().map(|v| v.exp()));
    p.mul(&log_p.sub(&log_q)?)?.sum()?.scale(1.0 / n as f64)
}

/// `α·T²·KL(teacher ‖ student) + (1−α)·CE(student, labels)`.
pub fn kd_loss<T: Scalar>(student: &Var<T>, teacher: &Var<T>, labels: &[usize], kd: KdParams) -> Result<Var<T>> {
    kd.validate()?;
    let kl = distillation_kl(student, teacher, kd.temperature)?;
    let ce = cross_entropy(student, labels)?;
    let t2 = kd.temperature * kd.temperature;
    kl.scale(kd.alpha * t2)?.add(&ce.scale(1.0 - kd.alpha)?)
}
