use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CViTModel, ModelConfig};
use crate::rng::RngState;

/// Axes of an FFN ablation sweep. An empty axis keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub chunks: Vec<usize>,
    pub ratio: Vec<f64>,
    pub cascade: Vec<bool>,
    pub projection: Vec<bool>,
    pub share: Vec<bool>,
}

fn parse_switch(v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(Error::Config(format!("expected on/off, got `{other}`"))),
    }
}

fn parse_list<V>(key: &str, values: &str, f: impl Fn(&str) -> Result<V>) -> Result<Vec<V>> {
    values
        .split(',')
        .map(|v| f(v.trim()).map_err(|e| Error::Config(format!("grid axis `{key}`: {e}"))))
        .collect()
}

impl FromStr for AblationGrid {
    type Err = Error;

    /// Space-separated `key=v1,v2` terms, e.g. `chunks=2,4 ratio=2.5,4 cascade=on,off`.
    fn from_str(s: &str) -> Result<Self> {
        let mut grid = Self::default();
        for term in s.split_whitespace() {
            let (key, values) = term
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("grid term `{term}` is not key=values")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|e| Error::Config(format!("`{v}`: {e}")));
            match key {
                "chunks" => {
                    grid.chunks = parse_list(key, values, |v| {
                        v.parse::<usize>().map_err(|e| Error::Config(format!("`{v}`: {e}")))
                    })?
                }
                "ratio" => grid.ratio = parse_list(key, values, num)?,
                "cascade" => grid.cascade = parse_list(key, values, parse_switch)?,
                "projection" => grid.projection = parse_list(key, values, parse_switch)?,
                "share" => grid.share = parse_list(key, values, parse_switch)?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown grid axis `{other}`; expected chunks, ratio, cascade, projection or share"
                    )))
                }
            }
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub chunks: usize,
    pub ratio: f64,
    pub cascade: bool,
    pub projection: bool,
    pub share: bool,
    /// Distinct parameters of the whole model.
    pub params: Option<u64>,
    pub flops: Option<u64>,
    /// FLOPs of the block FFNs alone.
    pub ffn_flops: Option<u64>,
    pub val_acc: Option<f64>,
    pub error: Option<String>,
}

fn or_base<V: Clone>(axis: &[V], base: V) -> Vec<V> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

impl AblationGrid {
    /// Every combination, in axis order, applied on top of `base`.
    pub fn configs(&self, base: &ModelConfig) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for &chunks in &or_base(&self.chunks, base.chunks) {
            for &expansion in &or_base(&self.ratio, base.expansion) {
                for &cascade in &or_base(&self.cascade, base.cascade) {
                    for &projection in &or_base(&self.projection, base.projection) {
                        for &weight_sharing in &or_base(&self.share, base.weight_sharing) {
                            out.push(ModelConfig {
                                chunks,
                                expansion,
                                cascade,
                                projection,
                                weight_sharing,
                                final_ffn_expansion: None,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

fn is_block_ffn(path: &str) -> bool {
    path.starts_with("stages.") && (path.contains(".ffn0") || path.contains(".ffn1"))
}

/// Structural cost of one configuration. Invalid combinations are reported in the row.
pub fn ablation_row(cfg: &ModelConfig, input_size: usize) -> AblationRow {
    let mut row = AblationRow {
        chunks: cfg.chunks,
        ratio: cfg.expansion,
        cascade: cfg.cascade,
        projection: cfg.projection,
        share: cfg.weight_sharing,
        params: None,
        flops: None,
        ffn_flops: None,
        val_acc: None,
        error: None,
    };
    let built = CViTModel::<f32>::build(cfg, RngState::new(0)).and_then(|m| m.cost_report(input_size));
    match built {
        Ok(r) => {
            row.params = Some(r.unique_params());
            row.flops = Some(r.total_flops());
            row.ffn_flops = Some(r.rows.iter().filter(|x| is_block_ffn(&x.path)).map(|x| x.flops).sum());
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

pub fn ablate(base: &ModelConfig, grid: &AblationGrid, input_size: usize) -> Vec<AblationRow> {
    grid.configs(base).iter().map(|c| ablation_row(c, input_size)).collect()
}
