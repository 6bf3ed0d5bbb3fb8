use super::{join, ConvBn, Layer, Visitor};
use crate::analytics::CostRow;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::kernels::{Chw, ConvGeom};
use crate::rng::Generator;
use crate::tensor::Scalar;

/// Overall stride of the patch embedding.
pub const PATCH_STRIDE: usize = 16;

/// Four stride-2 3×3 conv+BN+ReLU stages ramping `in → dim/8 → dim/4 → dim/2 → dim`.
pub struct PatchEmbed<T: Scalar = f32> {
    pub stages: Vec<ConvBn<T>>,
}

impl<T: Scalar> PatchEmbed<T> {
    pub fn new(in_channels: usize, dim: usize, rng: &mut Generator) -> Result<Self> {
        if !dim.is_multiple_of(8) {
            return Err(Error::Divisibility {
                what: "patch embedding dim".into(),
                value: dim,
                divisor: 8,
            });
        }
        let chans = [in_channels, dim / 8, dim / 4, dim / 2, dim];
        let stages = chans
            .windows(2)
            .map(|w| Ok(ConvBn::new(ConvGeom::new(w[0], w[1], 3, 2, 1, 1)?, rng)))
            .collect::<Result<_>>()?;
        Ok(Self { stages })
    }
}

impl<T: Scalar> Layer<T> for PatchEmbed<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let mut y = x.clone();
        for (i, s) in self.stages.iter().enumerate() {
            y = s
                .forward(&y)
                .and_then(|v| v.relu())
                .map_err(|e| e.in_layer(&i.to_string()))?;
        }
        Ok(y)
    }

    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>) {
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&join(prefix, &i.to_string()), v);
        }
    }

    fn cost(&self, prefix: &str, mut shape: Chw, rows: &mut Vec<CostRow>) -> Result<Chw> {
        for (i, s) in self.stages.iter().enumerate() {
            shape = s.cost(&join(prefix, &i.to_string()), shape, rows)?;
        }
        Ok(shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::tensor::Tensor;

    #[test]
    fn grid_is_input_over_sixteen() {
        let mut rng = RngState::new(0).generator();
        let pe = PatchEmbed::<f32>::new(3, 64, &mut rng).unwrap();
        let mut rows = Vec::new();
        assert_eq!(pe.cost("pe", (3, 224, 224), &mut rows).unwrap(), (64, 14, 14));
        let y = pe.forward(&Var::constant(Tensor::zeros([1, 3, 64, 64]))).unwrap();
        assert_eq!(y.shape(), vec![1, 64, 4, 4]);
    }
}
