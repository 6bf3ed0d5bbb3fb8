//! Full network assembly.

pub mod checkpoint;
mod config;
mod sharing;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, BACKBONE_EXPANSION, PRESETS};
pub use sharing::{apply_weight_sharing, SharingReport};

use crate::analytics::{CostReport, CostRow};
use crate::autograd::Var;
use crate::cga::CViTBlock;
use crate::error::{Error, Result};
use crate::kernels::Chw;
use crate::nn::{self, join, BatchNorm, Downsample, Layer, Linear, Mode, PatchEmbed, Visitor, PATCH_STRIDE};
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};

pub struct CViTModel<T: Scalar = f32> {
    pub config: ModelConfig,
    pub patch_embed: PatchEmbed<T>,
    pub stages: Vec<Vec<CViTBlock<T>>>,
    pub downsamples: Vec<Downsample<T>>,
    pub head_norm: BatchNorm<T>,
    pub classifier: Linear<T>,
    /// Outcome of weight sharing, when it was applied.
    pub sharing: Option<SharingReport>,
}

impl<T: Scalar> CViTModel<T> {
    /// Build and initialize from `config`. The same `rng` always yields the same weights.
    pub fn build(config: &ModelConfig, rng: RngState) -> Result<Self> {
        config.validate()?;
        let mut g = rng.generator();
        let patch_embed = PatchEmbed::new(config.in_channels, config.dims[0], &mut g)?;
        let last = (2, config.depths[2] - 1);
        let mut stages = Vec::with_capacity(3);
        let mut downsamples = Vec::with_capacity(2);
        for s in 0..3 {
            if s > 0 {
                downsamples.push(Downsample::new(config.dims[s - 1], config.dims[s], &mut g)?);
            }
            let mut blocks = Vec::with_capacity(config.depths[s]);
            for b in 0..config.depths[s] {
                let pre = config.ffn(s);
                let mut post = config.ffn(s);
                if let (Some(e), true) = (config.final_ffn_expansion, (s, b) == last) {
                    post.expansion = e;
                }
                blocks.push(CViTBlock::new(config.heads[s], pre, post, &mut g)?);
            }
            stages.push(blocks);
        }
        let width = config.dims[2];
        let mut model = Self {
            config: config.clone(),
            patch_embed,
            stages,
            downsamples,
            head_norm: BatchNorm::new(width),
            classifier: Linear::new(width, config.num_classes, &mut g),
            sharing: None,
        };
        if config.weight_sharing {
            let report = sharing::share_pairs(&mut model);
            model.sharing = Some(report);
        }
        Ok(model)
    }

    pub fn blocks(&self) -> impl Iterator<Item = (String, &CViTBlock<T>)> {
        self.stages.iter().enumerate().flat_map(|(s, blocks)| {
            blocks
                .iter()
                .enumerate()
                .map(move |(b, blk)| (format!("stages.{s}.{b}"), blk))
        })
    }

    pub fn set_mode(&self, mode: Mode) {
        nn::set_mode(self, mode);
    }

    pub fn parameters(&self) -> Vec<(String, Var<T>)> {
        nn::parameters(self)
    }

    pub fn zero_grad(&self) {
        nn::zero_grad(self);
    }

    /// Fold every batch norm that follows a conv. The model must be in eval mode.
    pub fn fuse_bn(&self) -> Result<()> {
        nn::fuse_bn(self)
    }

    /// A copy of this model with all conv+BN pairs folded.
    pub fn fused(&self) -> Result<Self> {
        let copy = checkpoint::from_bytes::<T>(&checkpoint::to_bytes(self)?)?;
        copy.fuse_bn()?;
        Ok(copy)
    }

    pub fn forward_features(&self, x: &Var<T>) -> Result<Var<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(Error::shape(
                "model input",
                &s,
                &[
                    0,
                    self.config.in_channels,
                    self.config.image_size,
                    self.config.image_size,
                ],
            ));
        }
        if !s[2].is_multiple_of(PATCH_STRIDE) || !s[3].is_multiple_of(PATCH_STRIDE) || s[2] == 0 || s[3] == 0 {
            return Err(Error::shape(
                "model input spatial dims (multiples of 16)",
                &s[2..],
                &[PATCH_STRIDE, PATCH_STRIDE],
            ));
        }
        let mut y = self.patch_embed.forward(x).map_err(|e| e.in_layer("patch_embed"))?;
        for (s, blocks) in self.stages.iter().enumerate() {
            if s > 0 {
                y = self.downsamples[s - 1]
                    .forward(&y)
                    .map_err(|e| e.in_layer(&format!("downsamples.{}", s - 1)))?;
            }
            for (b, blk) in blocks.iter().enumerate() {
                y = blk.forward(&y).map_err(|e| e.in_layer(&format!("stages.{s}.{b}")))?;
            }
        }
        Ok(y)
    }

    pub fn cost_report(&self, input_size: usize) -> Result<CostReport> {
        CostReport::of(self, (self.config.in_channels, input_size, input_size))
    }
}

impl<T: Scalar> Layer<T> for CViTModel<T> {
    /// `[n, in, h, w]` images to `[n, classes]` logits.
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let y = self.forward_features(x)?;
        let n = y.shape()[0];
        let pooled = y.mean_spatial()?;
        let normed = self.head_norm.forward(&pooled).map_err(|e| e.in_layer("head.norm"))?;
        let flat = normed.reshape([n, self.config.dims[2]])?;
        self.classifier.forward(&flat).map_err(|e| e.in_layer("head.fc"))
    }

    fn visit(&self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.patch_embed.visit(&join(prefix, "patch_embed"), v);
        for (s, blocks) in self.stages.iter().enumerate() {
            if s > 0 {
                self.downsamples[s - 1].visit(&join(prefix, &format!("downsamples.{}", s - 1)), v);
            }
            for (b, blk) in blocks.iter().enumerate() {
                blk.visit(&join(prefix, &format!("stages.{s}.{b}")), v);
            }
        }
        self.head_norm.visit(&join(prefix, "head.norm"), v);
        self.classifier.visit(&join(prefix, "head.fc"), v);
    }

    fn cost(&self, prefix: &str, input: Chw, rows: &mut Vec<CostRow>) -> Result<Chw> {
        let mut shape = self.patch_embed.cost(&join(prefix, "patch_embed"), input, rows)?;
        for (s, blocks) in self.stages.iter().enumerate() {
            if s > 0 {
                shape = self.downsamples[s - 1].cost(&join(prefix, &format!("downsamples.{}", s - 1)), shape, rows)?;
            }
            for (b, blk) in blocks.iter().enumerate() {
                shape = blk.cost(&join(prefix, &format!("stages.{s}.{b}")), shape, rows)?;
            }
        }
        let pooled = (shape.0, 1, 1);
        self.head_norm.cost(&join(prefix, "head.norm"), pooled, rows)?;
        self.classifier.cost(&join(prefix, "head.fc"), pooled, rows)
    }
}

/// Indices of the `k` largest entries of `row`, best first. Ties keep the lower index first.
pub fn top_k<T: Scalar>(row: &[T], k: usize) -> Vec<(usize, T)> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.into_iter().take(k).map(|i| (i, row[i])).collect()
}

/// Run the model on `images` without recording gradients.
pub fn predict<T: Scalar>(model: &CViTModel<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
    crate::autograd::no_grad(|| Ok(model.forward(&Var::constant(images.clone()))?.to_tensor()))
}
