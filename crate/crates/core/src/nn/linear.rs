use super::{join, Layer, Visitor, INIT_STD};
use crate::analytics::{CostRow, LayerKind};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::kernels::Chw;
use crate::rng::Generator;
use crate::tensor::{Scalar, Tensor};

/// Fully connected layer on `[n, in]` rows.
pub struct Linear<T: Scalar = f32> {
    pub weight: Var<T>,
    pub bias: Option<Var<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Generator) -> Self {
        Self {
            weight: Var::parameter(rng.trunc_normal_tensor(&[out_features, in_features], INIT_STD)),
            bias: Some(Var::parameter(Tensor::zeros([out_features]))),
        }
    }

    pub fn from_weights(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::shape("linear weight", weight.shape(), &[0, 0]));
        }
        if let Some(b) = &bias {
            if b.shape() != [weight.shape()[0]] {
                return Err(Error::shape("linear bias", b.shape(), &weight.shape()[..1]));
            }
        }
        Ok(Self {
            weight: Var::parameter(weight),
            bias: bias.map(Var::parameter),
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        x.linear(&self.weight, self.bias.as_ref())
    }

    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>) {
        v.param(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            v.param(&join(prefix, "bias"), b);
        }
    }

    /// Input is read as a flat feature vector of `c·h·w` values.
    fn cost(&self, prefix: &str, (c, h, w): Chw, rows: &mut Vec<CostRow>) -> Result<Chw> {
        let (fin, fout) = (self.in_features(), self.out_features());
        if c * h * w != fin {
            return Err(Error::shape("linear input", &[c, h, w], &[fout, fin]));
        }
        let wn = (fin * fout) as u64;
        let mut param_ids = vec![(self.weight.id(), wn)];
        if let Some(b) = &self.bias {
            param_ids.push((b.id(), fout as u64));
        }
        rows.push(CostRow {
            path: prefix.to_string(),
            kind: LayerKind::Linear,
            params: param_ids.iter().map(|p| p.1).sum(),
            buffers: 0,
            flops: wn,
            param_ids,
        });
        Ok((fout, 1, 1))
    }
}
