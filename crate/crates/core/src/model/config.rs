use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ccffn::{CcFfnConfig, DEFAULT_CHUNKS, DEFAULT_EXPANSION};
use crate::error::{Error, Result};
use crate::nn::PATCH_STRIDE;

/// Expansion of the plain FFN used by backbone-style configs.
pub const BACKBONE_EXPANSION: f64 = 2.0;

pub const PRESETS: &[&str] = &[
    "S", "M", "L", "XL", "M0", "M1", "M2", "M3", "M4", "M5", "tiny-S", "tiny-M", "tiny-L", "tiny-XL",
];

fn default_true() -> bool {
    true
}
fn default_chunks() -> usize {
    DEFAULT_CHUNKS
}
fn default_expansion() -> f64 {
    DEFAULT_EXPANSION
}
fn default_classes() -> usize {
    1000
}
fn default_image() -> usize {
    224
}
fn default_in_channels() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub name: String,
    pub depths: [usize; 3],
    pub dims: [usize; 3],
    pub heads: [usize; 3],
    #[serde(default = "default_chunks")]
    pub chunks: usize,
    #[serde(default = "default_expansion")]
    pub expansion: f64,
    #[serde(default = "default_true")]
    pub cascade: bool,
    #[serde(default)]
    pub projection: bool,
    #[serde(default)]
    pub weight_sharing: bool,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_image")]
    pub image_size: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    /// Expansion of the network's last post-attention FFN, when it differs.
    #[serde(default)]
    pub final_ffn_expansion: Option<f64>,
}

impl ModelConfig {
    fn cvit(name: &str, depths: [usize; 3], dims: [usize; 3], heads: [usize; 3]) -> Self {
        Self {
            name: name.to_string(),
            depths,
            dims,
            heads,
            chunks: DEFAULT_CHUNKS,
            expansion: DEFAULT_EXPANSION,
            cascade: true,
            projection: false,
            weight_sharing: false,
            num_classes: default_classes(),
            image_size: default_image(),
            in_channels: default_in_channels(),
            final_ffn_expansion: None,
        }
    }

    fn tiny(name: &str, depths: [usize; 3], dims: [usize; 3], heads: [usize; 3]) -> Self {
        Self {
            num_classes: 4,
            image_size: 64,
            ..Self::cvit(name, depths, dims, heads)
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let c = match name {
            "S" => Self::cvit("S", [1, 2, 3], [64, 128, 192], [2, 3, 3]),
            "M" => Self::cvit("M", [1, 2, 3], [128, 192, 224], [4, 3, 2]),
            "L" => Self::cvit("L", [1, 2, 3], [128, 256, 384], [4, 4, 4]),
            "XL" => Self::cvit("XL", [1, 3, 4], [192, 288, 384], [3, 3, 4]),
            "M0" => Self::cvit("M0", [1, 2, 3], [64, 128, 192], [4, 4, 4]).into_backbone(),
            "M1" => Self::cvit("M1", [1, 2, 3], [128, 144, 192], [2, 3, 3]).into_backbone(),
            "M2" => Self::cvit("M2", [1, 2, 3], [128, 192, 224], [4, 3, 2]).into_backbone(),
            "M3" => Self::cvit("M3", [1, 2, 3], [128, 240, 320], [4, 3, 4]).into_backbone(),
            "M4" => Self::cvit("M4", [1, 2, 3], [128, 256, 384], [4, 4, 4]).into_backbone(),
            "M5" => Self::cvit("M5", [1, 3, 4], [192, 288, 384], [3, 3, 4]).into_backbone(),
            "tiny-S" => Self::tiny("tiny-S", [1, 1, 1], [16, 24, 32], [2, 2, 2]),
            "tiny-M" => Self::tiny("tiny-M", [1, 1, 1], [16, 32, 32], [2, 2, 2]),
            "tiny-L" => Self::tiny("tiny-L", [1, 1, 2], [32, 48, 64], [2, 2, 2]),
            "tiny-XL" => Self::tiny("tiny-XL", [1, 2, 2], [32, 48, 64], [2, 3, 4]),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}`; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(c)
    }

    fn into_backbone(mut self) -> Self {
        self.chunks = 1;
        self.expansion = BACKBONE_EXPANSION;
        self.cascade = false;
        self.projection = false;
        self
    }

    /// Same layout with every block FFN replaced by a plain FFN.
    pub fn backbone(&self) -> Self {
        let mut b = self.clone().into_backbone();
        b.name = format!("{}-backbone", self.name);
        b.final_ffn_expansion = None;
        b
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config json: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for s in 0..3 {
            let (c, h) = (self.dims[s], self.heads[s]);
            let ok = c > 0 && h > 0 && self.chunks > 0 && c % self.chunks == 0 && c >= h && self.depths[s] > 0;
            if !ok {
                bad.push(format!(
                    "stage {s}: (C={c}, n={}, h={h}, depth={})",
                    self.chunks, self.depths[s]
                ));
            }
        }
        if !bad.is_empty() {
            return Err(Error::Config(format!(
                "each stage needs C divisible by the chunk count and at least one channel per head: {}",
                bad.join("; ")
            )));
        }
        if !self.dims[0].is_multiple_of(8) {
            return Err(Error::Config(format!(
                "first embedding dim {} must be divisible by 8",
                self.dims[0]
            )));
        }
        for e in std::iter::once(self.expansion).chain(self.final_ffn_expansion) {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("expansion ratio must be positive, got {e}")));
            }
        }
        if self.num_classes == 0 || self.in_channels == 0 {
            return Err(Error::Config("num_classes and in_channels must be positive".into()));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(PATCH_STRIDE) {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of {PATCH_STRIDE}",
                self.image_size
            )));
        }
        // two stride-2 subsamplings each need at least a 2x2 grid
        if self.image_size / PATCH_STRIDE < 3 {
            return Err(Error::Config(format!(
                "image size {} is too small; the token grid must be at least 3x3",
                self.image_size
            )));
        }
        Ok(())
    }

    /// FFN settings for a block in stage `stage`.
    pub fn ffn(&self, stage: usize) -> CcFfnConfig {
        CcFfnConfig {
            channels: self.dims[stage],
            chunks: self.chunks,
            expansion: self.expansion,
            cascade: self.cascade,
            projection: self.projection,
        }
    }

    pub fn total_blocks(&self) -> usize {
        self.depths.iter().sum()
    }
}
