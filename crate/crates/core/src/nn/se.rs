use super::{join, Conv2d, Layer, Visitor};
use crate::analytics::CostRow;
use crate::autograd::Var;
use crate::error::Result;
use crate::kernels::{Chw, ConvGeom};
use crate::rng::Generator;
use crate::tensor::Scalar;

pub const SE_REDUCTION: usize = 4;

/// Squeeze-and-excite: `x · sigmoid(up(relu(down(mean_hw(x)))))`.
///
/// Both convs carry a bias since no normalization follows them.
pub struct SqueezeExcite<T: Scalar = f32> {
    pub reduce: Conv2d<T>,
    pub expand: Conv2d<T>,
}

impl<T: Scalar> SqueezeExcite<T> {
    pub fn new(channels: usize, rng: &mut Generator) -> Result<Self> {
        let hidden = (channels / SE_REDUCTION).max(1);
        Ok(Self {
            reduce: Conv2d::with_bias(ConvGeom::pointwise(channels, hidden)?, rng),
            expand: Conv2d::with_bias(ConvGeom::pointwise(hidden, channels)?, rng),
        })
    }

    pub fn gate(&self, x: &Var<T>) -> Result<Var<T>> {
        let s = x.mean_spatial()?;
        let s = self.reduce.forward(&s)?.relu()?;
        self.expand.forward(&s)?.sigmoid()
    }
}

impl<T: Scalar> Layer<T> for SqueezeExcite<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let g = self.gate(x)?;
        x.mul_channel(&g)
    }

    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.reduce.visit(&join(prefix, "reduce"), v);
        self.expand.visit(&join(prefix, "expand"), v);
    }

    fn cost(&self, prefix: &str, (c, h, w): Chw, rows: &mut Vec<CostRow>) -> Result<Chw> {
        let pooled = self.reduce.cost(&join(prefix, "reduce"), (c, 1, 1), rows)?;
        self.expand.cost(&join(prefix, "expand"), pooled, rows)?;
        Ok((c, h, w))
    }
}
