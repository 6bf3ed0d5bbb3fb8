use serde::{Deserialize, Serialize};

use super::data::{Split, ToyDataset};
use super::loss::{cross_entropy, kd_loss, KdParams};
use super::optim::{cosine_lr, AdamW, OptimConfig};
use crate::autograd::{no_grad, Var};
use crate::error::{Error, Result};
use crate::model::CViTModel;
use crate::nn::{Layer, Mode};
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn final_val_acc(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.val_acc)
    }

    pub fn best_val_acc(&self) -> f64 {
        self.records.iter().map(|r| r.val_acc).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,val_acc\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, r.val_acc));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.records).map_err(|e| Error::Contract(e.to_string()))
    }
}

/// A frozen teacher and the distillation weights to use against it.
pub struct Teacher<'a, T: Scalar> {
    pub model: &'a CViTModel<T>,
    pub kd: KdParams,
}

/// Shuffled mini-batches for one epoch. A trailing batch smaller than two is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, rng: RngState) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.generator().shuffle(&mut order);
    order
        .chunks(batch_size.max(2))
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Logits for a whole split, in eval mode and without gradients.
pub fn split_logits<T: Scalar>(model: &CViTModel<T>, split: &Split<T>, batch_size: usize) -> Result<Tensor<T>> {
    model.set_mode(Mode::Eval);
    let idx: Vec<usize> = (0..split.len()).collect();
    let mut parts = Vec::new();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = split.batch(chunk)?;
        parts.push(no_grad(|| model.forward(&Var::constant(x)))?.to_tensor());
    }
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    Tensor::concat_batch(&refs)
}

/// Top-1 accuracy of `model` on `split`.
pub fn evaluate<T: Scalar>(model: &CViTModel<T>, split: &Split<T>, batch_size: usize) -> Result<f64> {
    let logits = split_logits(model, split, batch_size)?;
    let k = logits.shape()[1];
    let correct = split
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| crate::model::top_k(&logits.data()[i * k..(i + 1) * k], 1)[0].0 == y)
        .count();
    Ok(correct as f64 / split.len().max(1) as f64)
}

fn gather_rows<T: Scalar>(t: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let k = t.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * k);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * k..(i + 1) * k]);
    }
    Tensor::new([idx.len(), k], data)
}

/// Train `model` in place and return one record per epoch.
pub fn train_loop<T: Scalar>(
    model: &CViTModel<T>,
    data: &ToyDataset<T>,
    optim: &OptimConfig,
    teacher: Option<Teacher<'_, T>>,
    rng: RngState,
) -> Result<TrainTrace> {
    optim.validate()?;
    if data.train.len() < 2 || data.val.is_empty() {
        return Err(Error::Contract(
            "training needs at least two train samples and one val sample".into(),
        ));
    }
    if model.config.num_classes != data.classes() {
        return Err(Error::Config(format!(
            "model has {} classes but the dataset has {}",
            model.config.num_classes,
            data.classes()
        )));
    }
    let soft_targets = match &teacher {
        Some(t) => {
            t.kd.validate()?;
            Some((split_logits(t.model, &data.train, optim.batch_size)?, t.kd))
        }
        None => None,
    };
    let params = model.parameters();
    let mut opt = AdamW::<T>::new(*optim);
    let mut trace = TrainTrace::default();
    for epoch in 0..optim.epochs {
        let lr = cosine_lr(optim, epoch);
        model.set_mode(Mode::Train);
        let (mut total, mut seen) = (0.0, 0usize);
        for batch in epoch_batches(data.train.len(), optim.batch_size, rng.split(epoch as u64)) {
            let (x, labels) = data.train.batch(&batch)?;
            model.zero_grad();
            let logits = model.forward(&Var::constant(x))?;
            let loss = match &soft_targets {
                Some((all, kd)) => {
                    let t = Var::constant(gather_rows(all, &batch)?);
                    kd_loss(&logits, &t, &labels, *kd)
                }
                None => cross_entropy(&logits, &labels),
            }
            .map_err(|e| e.in_layer("loss"))?;
            loss.backward()?;
            for (name, p) in &params {
                if p.grad().is_some_and(|g| !g.is_finite()) {
                    return Err(Error::NonFinite {
                        op: "backward",
                        layer: name.clone(),
                    });
                }
            }
            opt.step(&params, lr);
            let v = loss.value().data()[0].to_f64().unwrap_or(f64::NAN);
            total += v * batch.len() as f64;
            seen += batch.len();
        }
        let val_acc = evaluate(model, &data.val, optim.batch_size)?;
        trace.records.push(EpochRecord {
            epoch,
            lr,
            train_loss: total / seen.max(1) as f64,
            val_acc,
        });
    }
    model.set_mode(Mode::Eval);
    Ok(trace)
}
