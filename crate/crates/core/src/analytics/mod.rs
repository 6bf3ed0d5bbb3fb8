//! Parameter and FLOP accounting.
//!
//! FLOPs follow the multiply-accumulate convention: one MAC counts as one
//! FLOP and normalization, activations, softmax and elementwise arithmetic
//! are free. Parameters are learnable scalars; batch-norm running statistics
//! are tallied separately as buffers.

mod ablation;
mod apf;
mod report;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ablation::{ablate, ablation_row, AblationGrid, AblationRow};
pub use apf::{apf, load_apf_table, ApfRecord, ApfTableRow};
pub use report::{emit_report, parse_csv_report, ReportFormat};

use crate::error::{Error, Result};
use crate::kernels::Chw;
use crate::model::{CViTModel, ModelConfig};
use crate::nn::Layer;
use crate::rng::RngState;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    #[serde(rename = "batchnorm")]
    BatchNorm,
    Linear,
    Attention,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Linear => "linear",
            LayerKind::Attention => "attention",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(LayerKind::Conv),
            "batchnorm" => Ok(LayerKind::BatchNorm),
            "linear" => Ok(LayerKind::Linear),
            "attention" => Ok(LayerKind::Attention),
            other => Err(Error::Config(format!("unknown layer kind `{other}`"))),
        }
    }
}

/// Cost of one leaf layer at a given input size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostRow {
    pub path: String,
    pub kind: LayerKind,
    pub params: u64,
    pub buffers: u64,
    pub flops: u64,
    /// `(tensor id, element count)` of every parameter the row uses.
    #[serde(skip)]
    pub param_ids: Vec<(u64, u64)>,
}

/// Rows compare on their reported numbers; tensor identities are ignored.
impl PartialEq for CostRow {
    fn eq(&self, o: &Self) -> bool {
        (&self.path, self.kind, self.params, self.buffers, self.flops)
            == (&o.path, o.kind, o.params, o.buffers, o.flops)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// `(channels, height, width)` of one input image.
    pub input: Chw,
    pub rows: Vec<CostRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTotals {
    /// Every use of a parameter counted; shared tensors appear once per use.
    pub params: u64,
    /// Each distinct parameter tensor counted once.
    pub unique_params: u64,
    pub buffers: u64,
    pub flops: u64,
    pub mparams: f64,
    pub mflops: f64,
}

impl CostReport {
    pub fn of<T: Scalar, L: Layer<T> + ?Sized>(layer: &L, input: Chw) -> Result<Self> {
        let mut rows = Vec::new();
        layer.cost("", input, &mut rows)?;
        Ok(Self { input, rows })
    }

    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn unique_params(&self) -> u64 {
        let mut seen: HashMap<u64, u64> = HashMap::new();
        let mut anonymous = 0;
        for r in &self.rows {
            if r.param_ids.is_empty() {
                anonymous += r.params;
            }
            for &(id, n) in &r.param_ids {
                seen.insert(id, n);
            }
        }
        anonymous + seen.values().sum::<u64>()
    }

    pub fn total_buffers(&self) -> u64 {
        self.rows.iter().map(|r| r.buffers).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.rows.iter().map(|r| r.flops).sum()
    }

    /// Counting each MAC as two operations.
    pub fn total_flops_strict(&self) -> u64 {
        2 * self.total_flops()
    }

    pub fn mflops(&self) -> f64 {
        self.total_flops() as f64 / 1e6
    }

    pub fn mparams(&self) -> f64 {
        self.unique_params() as f64 / 1e6
    }

    pub fn totals(&self) -> CostTotals {
        CostTotals {
            params: self.total_params(),
            unique_params: self.unique_params(),
            buffers: self.total_buffers(),
            flops: self.total_flops(),
            mparams: self.mparams(),
            mflops: self.mflops(),
        }
    }

    /// Rows whose path starts with `prefix`.
    pub fn subtree(&self, prefix: &str) -> Self {
        Self {
            input: self.input,
            rows: self
                .rows
                .iter()
                .filter(|r| r.path.starts_with(prefix))
                .cloned()
                .collect(),
        }
    }
}

/// Parameter rows of `model` at its configured image size.
pub fn count_params<T: Scalar>(model: &CViTModel<T>) -> Result<CostReport> {
    model.cost_report(model.config.image_size)
}

/// FLOP rows of `model` for square inputs of side `input_size`.
pub fn count_flops<T: Scalar>(model: &CViTModel<T>, input_size: usize) -> Result<CostReport> {
    model.cost_report(input_size)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub cvit_params: u64,
    pub backbone_params: u64,
    pub cvit_flops: u64,
    pub backbone_flops: u64,
    pub param_reduction_pct: f64,
    pub flop_reduction_pct: f64,
}

/// Percentage savings of `cvit` relative to `backbone`, built at `input_size`.
///
/// The two configs must share stage layout and may differ only in their FFNs.
pub fn compare_to_backbone(cvit: &ModelConfig, backbone: &ModelConfig, input_size: usize) -> Result<Reduction> {
    if (cvit.depths, cvit.dims, cvit.heads, cvit.num_classes)
        != (backbone.depths, backbone.dims, backbone.heads, backbone.num_classes)
    {
        return Err(Error::Config(format!(
            "configs differ beyond the FFN: {:?}/{:?}/{:?} vs {:?}/{:?}/{:?}",
            cvit.depths, cvit.dims, cvit.heads, backbone.depths, backbone.dims, backbone.heads
        )));
    }
    let count = |cfg: &ModelConfig| -> Result<(u64, u64)> {
        let m = CViTModel::<f32>::build(cfg, RngState::new(0))?;
        let r = m.cost_report(input_size)?;
        Ok((r.unique_params(), r.total_flops()))
    };
    let (cp, cf) = count(cvit)?;
    let (bp, bf) = count(backbone)?;
    Ok(Reduction {
        cvit_params: cp,
        backbone_params: bp,
        cvit_flops: cf,
        backbone_flops: bf,
        param_reduction_pct: 100.0 * (1.0 - cp as f64 / bp as f64),
        flop_reduction_pct: 100.0 * (1.0 - cf as f64 / bf as f64),
    })
}
