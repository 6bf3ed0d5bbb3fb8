use super::{join, residual, ConvBn, Layer, SqueezeExcite, Visitor};
use crate::analytics::CostRow;
use crate::autograd::Var;
use crate::ccffn::ChunkFfn;
use crate::error::{Error, Result};
use crate::kernels::{Chw, ConvGeom};
use crate::rng::Generator;
use crate::tensor::Scalar;

pub const SUBSAMPLE_EXPANSION: usize = 4;

/// Expansion ratio of the plain FFNs wrapped around a subsample block.
pub const DOWNSAMPLE_FFN_EXPANSION: usize = 2;

/// Inverted residual that halves the grid:
/// expand 1×1 → ReLU → depthwise 3×3 stride 2 → ReLU → SE → project 1×1.
///
/// Odd extents round up (`7 → 4`).
pub struct SubsampleBlock<T: Scalar = f32> {
    pub expand: ConvBn<T>,
    pub depthwise: ConvBn<T>,
    pub se: SqueezeExcite<T>,
    pub project: ConvBn<T>,
}

impl<T: Scalar> SubsampleBlock<T> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut Generator) -> Result<Self> {
        let hidden = in_channels * SUBSAMPLE_EXPANSION;
        Ok(Self {
            expand: ConvBn::new(ConvGeom::pointwise(in_channels, hidden)?, rng),
            depthwise: ConvBn::new(ConvGeom::depthwise(hidden, 3, 2)?, rng),
            se: SqueezeExcite::new(hidden, rng)?,
            project: ConvBn::new(ConvGeom::pointwise(hidden, out_channels)?, rng),
        })
    }

    fn check_grid(h: usize, w: usize) -> Result<()> {
        if h < 2 || w < 2 {
            return Err(Error::Contract(format!(
                "subsample needs a grid of at least 2x2, got {h}x{w}"
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> Layer<T> for SubsampleBlock<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let s = x.shape();
        if s.len() == 4 {
            Self::check_grid(s[2], s[3])?;
        }
        let y = self.expand.forward(x)?.relu().map_err(|e| e.in_layer("expand"))?;
        let y = self
            .depthwise
            .forward(&y)?
            .relu()
            .map_err(|e| e.in_layer("depthwise"))?;
        let y = self.se.forward(&y).map_err(|e| e.in_layer("se"))?;
        self.project.forward(&y).map_err(|e| e.in_layer("project"))
    }

    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.expand.visit(&join(prefix, "expand"), v);
        self.depthwise.visit(&join(prefix, "depthwise"), v);
        self.se.visit(&join(prefix, "se"), v);
        self.project.visit(&join(prefix, "project"), v);
    }

    fn cost(&self, prefix: &str, input: Chw, rows: &mut Vec<CostRow>) -> Result<Chw> {
        Self::check_grid(input.1, input.2)?;
        let s = self.expand.cost(&join(prefix, "expand"), input, rows)?;
        let s = self.depthwise.cost(&join(prefix, "depthwise"), s, rows)?;
        let s = self.se.cost(&join(prefix, "se"), s, rows)?;
        self.project.cost(&join(prefix, "project"), s, rows)
    }
}

/// Transition between stages: residual depthwise conv and plain FFN at the
/// input width, the subsample block, then the same pair at the output width.
pub struct Downsample<T: Scalar = f32> {
    pub pre_dw: ConvBn<T>,
    pub pre_ffn: ChunkFfn<T>,
    pub subsample: SubsampleBlock<T>,
    pub post_dw: ConvBn<T>,
    pub post_ffn: ChunkFfn<T>,
}

impl<T: Scalar> Downsample<T> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut Generator) -> Result<Self> {
        let e = DOWNSAMPLE_FFN_EXPANSION;
        Ok(Self {
            pre_dw: ConvBn::new(ConvGeom::depthwise(in_channels, 3, 1)?, rng),
            pre_ffn: ChunkFfn::new(in_channels, e * in_channels, rng)?,
            subsample: SubsampleBlock::new(in_channels, out_channels, rng)?,
            post_dw: ConvBn::new(ConvGeom::depthwise(out_channels, 3, 1)?, rng),
            post_ffn: ChunkFfn::new(out_channels, e * out_channels, rng)?,
        })
    }
}

impl<T: Scalar> Layer<T> for Downsample<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let y = residual(x, "pre_dw", |v| self.pre_dw.forward(v))?;
        let y = residual(&y, "pre_ffn", |v| self.pre_ffn.forward(v))?;
        let y = self.subsample.forward(&y).map_err(|e| e.in_layer("subsample"))?;
        let y = residual(&y, "post_dw", |v| self.post_dw.forward(v))?;
        residual(&y, "post_ffn", |v| self.post_ffn.forward(v))
    }

    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.pre_dw.visit(&join(prefix, "pre_dw"), v);
        self.pre_ffn.visit(&join(prefix, "pre_ffn"), v);
        self.subsample.visit(&join(prefix, "subsample"), v);
        self.post_dw.visit(&join(prefix, "post_dw"), v);
        self.post_ffn.visit(&join(prefix, "post_ffn"), v);
    }

    fn cost(&self, prefix: &str, input: Chw, rows: &mut Vec<CostRow>) -> Result<Chw> {
        let s = self.pre_dw.cost(&join(prefix, "pre_dw"), input, rows)?;
        let s = self.pre_ffn.cost(&join(prefix, "pre_ffn"), s, rows)?;
        let s = self.subsample.cost(&join(prefix, "subsample"), s, rows)?;
        let s = self.post_dw.cost(&join(prefix, "post_dw"), s, rows)?;
        self.post_ffn.cost(&join(prefix, "post_ffn"), s, rows)
    }
}
