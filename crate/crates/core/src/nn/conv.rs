use parking_lot::RwLock;

use super::{join, BatchNorm, Layer, Mode, Visitor, INIT_STD};
use crate::analytics::{CostRow, LayerKind};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::kernels::{Chw, ConvGeom};
use crate::rng::Generator;
use crate::tensor::{Scalar, Tensor};

/// Convolution with an optional bias. Bias is only present after BN folding
/// or where no normalization follows.
#[derive(Clone)]
pub struct Conv2d<T: Scalar = f32> {
    pub geom: ConvGeom,
    pub weight: Var<T>,
    pub bias: Option<Var<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(geom: ConvGeom, rng: &mut Generator) -> Self {
        Self {
            weight: Var::parameter(rng.trunc_normal_tensor(&geom.weight_shape(), INIT_STD)),
            bias: None,
            geom,
        }
    }

    pub fn with_bias(geom: ConvGeom, rng: &mut Generator) -> Self {
        let mut c = Self::new(geom, rng);
        c.bias = Some(Var::parameter(Tensor::zeros([geom.out_channels])));
        c
    }

    pub fn from_weights(geom: ConvGeom, weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        if weight.shape() != geom.weight_shape() {
            return Err(Error::shape("conv weight", weight.shape(), &geom.weight_shape()));
        }
        if let Some(b) = &bias {
            if b.shape() != [geom.out_channels] {
                return Err(Error::shape("conv bias", b.shape(), &[geom.out_channels]));
            }
        }
        Ok(Self {
            geom,
            weight: Var::parameter(weight),
            bias: bias.map(Var::parameter),
        })
    }

    pub fn macs(&self, h: usize, w: usize) -> Result<(u64, usize, usize)> {
        let (oh, ow) = self.geom.output_hw(h, w)?;
        let g = &self.geom;
        let k = (g.kernel * g.kernel) as u64;
        Ok(((oh * ow * g.out_channels) as u64 * g.in_per_group() as u64 * k, oh, ow))
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let c = x.shape().get(1).copied().unwrap_or(0);
        if c != self.geom.in_channels {
            return Err(Error::shape("conv input", &x.shape(), &self.geom.weight_shape()));
        }
        x.conv2d(&self.weight, self.bias.as_ref(), self.geom)
    }

    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>) {
        v.param(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            v.param(&join(prefix, "bias"), b);
        }
    }

    fn cost(&self, prefix: &str, (c, h, w): Chw, rows: &mut Vec<CostRow>) -> Result<Chw> {
        if c != self.geom.in_channels {
            return Err(Error::shape("conv input", &[c, h, w], &self.geom.weight_shape()));
        }
        let (flops, oh, ow) = self.macs(h, w)?;
        let wn = self.weight.numel() as u64;
        let mut param_ids = vec![(self.weight.id(), wn)];
        let mut params = wn;
        if let Some(b) = &self.bias {
            params += b.numel() as u64;
            param_ids.push((b.id(), b.numel() as u64));
        }
        rows.push(CostRow {
            path: prefix.to_string(),
            kind: LayerKind::Conv,
            params,
            buffers: 0,
            flops,
            param_ids,
        });
        Ok((self.geom.out_channels, oh, ow))
    }
}

/// Fold an eval-mode batch norm into the preceding convolution.
pub fn fold_bn_into_conv<T: Scalar>(conv: &Conv2d<T>, bn: &BatchNorm<T>) -> Result<Conv2d<T>> {
    if bn.mode() == Mode::Train {
        return Err(Error::Contract("cannot fold a batch norm in train mode".into()));
    }
    let out = conv.geom.out_channels;
    if bn.channels() != out {
        return Err(Error::shape("fold_bn_into_conv", &[out], &[bn.channels()]));
    }
    let (scale, shift) = bn.affine();
    let w = conv.weight.value();
    let per_out = w.numel() / out;
    let weight = Tensor::from_fn(w.shape().to_vec(), |i| w.data()[i] * scale[i / per_out]);
    let bias = Tensor::from_fn([out], |o| {
        let b0 = conv.bias.as_ref().map_or(T::zero(), |b| b.value().data()[o]);
        b0 * scale[o] + shift[o]
    });
    Conv2d::from_weights(conv.geom, weight, Some(bias))
}

/// Convolution followed by batch norm, foldable in place for inference.
pub struct ConvBn<T: Scalar = f32> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
    fused: RwLock<Option<Conv2d<T>>>,
}

impl<T: Scalar> ConvBn<T> {
    pub fn new(geom: ConvGeom, rng: &mut Generator) -> Self {
        Self::from_parts(Conv2d::new(geom, rng), BatchNorm::new(geom.out_channels))
    }

    pub fn from_parts(conv: Conv2d<T>, bn: BatchNorm<T>) -> Self {
        Self {
            conv,
            bn,
            fused: RwLock::new(None),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.geom.out_channels
    }

    pub fn is_fused(&self) -> bool {
        self.fused.read().is_some()
    }

    /// Replace conv+BN by a single biased conv. Idempotent.
    pub fn fuse(&self) -> Result<()> {
        let mut slot = self.fused.write();
        if slot.is_none() {
            *slot = Some(fold_bn_into_conv(&self.conv, &self.bn)?);
        }
        Ok(())
    }

    pub fn unfuse(&self) {
        *self.fused.write() = None;
    }
}

impl<T: Scalar> Layer<T> for ConvBn<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        if let Some(f) = &*self.fused.read() {
            return f.forward(x);
        }
        let y = self.conv.forward(x)?;
        self.bn.forward(&y)
    }

    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>) {
        v.conv_bn(prefix, self);
        if let Some(f) = &*self.fused.read() {
            return f.visit(prefix, v);
        }
        self.conv.visit(&join(prefix, "conv"), v);
        self.bn.visit(&join(prefix, "bn"), v);
    }

    fn cost(&self, prefix: &str, input: Chw, rows: &mut Vec<CostRow>) -> Result<Chw> {
        if let Some(f) = &*self.fused.read() {
            return f.cost(prefix, input, rows);
        }
        let out = self.conv.cost(&join(prefix, "conv"), input, rows)?;
        self.bn.cost(&join(prefix, "bn"), out, rows)
    }
}
