use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accuracy per log-scaled compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApfRecord {
    pub top1: f64,
    pub mflops: f64,
    pub apf: f64,
}

impl ApfRecord {
    /// APF rounded to one decimal.
    pub fn rounded(&self) -> f64 {
        (self.apf * 10.0).round() / 10.0
    }
}

/// `top1 / log10(mflops)`, with `top1` in percent.
pub fn apf(top1: f64, mflops: f64) -> Result<ApfRecord> {
    if !mflops.is_finite() || mflops <= 1.0 {
        return Err(Error::Domain(format!("APF needs MFLOPs > 1, got {mflops}")));
    }
    if !(top1 > 0.0 && top1 <= 100.0) {
        return Err(Error::Domain(format!("top-1 must lie in (0, 100], got {top1}")));
    }
    Ok(ApfRecord {
        top1,
        mflops,
        apf: top1 / mflops.log10(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApfTableRow {
    pub model: String,
    pub top1: f64,
    pub mflops: f64,
    /// Reference value, when the table carries one.
    #[serde(default)]
    pub apf: Option<f64>,
}

/// Read `model,top1,mflops[,apf]` rows.
pub fn load_apf_table(path: impl AsRef<Path>) -> Result<Vec<ApfTableRow>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())
        .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display()))))
        .collect()
}
