use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CostReport, CostRow, CostTotals, LayerKind};
use crate::error::{Error, Result};
use crate::kernels::Chw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    layer: String,
    kind: LayerKind,
    params: u64,
    flops: u64,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    input: Chw,
    rows: &'a [CostRow],
    totals: CostTotals,
}

/// Render `report`. Every format carries the same per-layer numbers.
pub fn emit_report(report: &CostReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(["layer", "kind", "params", "flops"]).map_err(csv_err)?;
            for r in &report.rows {
                w.serialize(CsvRow {
                    layer: r.path.clone(),
                    kind: r.kind,
                    params: r.params,
                    flops: r.flops,
                })
                .map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
        }
        ReportFormat::Json => serde_json::to_string_pretty(&JsonReport {
            input: report.input,
            rows: &report.rows,
            totals: report.totals(),
        })
        .map_err(|e| Error::Config(e.to_string())),
        ReportFormat::Table => Ok(table(report)),
    }
}

fn table(report: &CostReport) -> String {
    let width = report.rows.iter().map(|r| r.path.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:<9}  {:>10}  {:>12}",
        "layer", "kind", "params", "flops"
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:<9}  {:>10}  {:>12}",
            r.path,
            r.kind.as_str(),
            r.params,
            r.flops
        );
    }
    let t = report.totals();
    let _ = writeln!(
        s,
        "total params {} ({:.2} M unique, {} with sharing counted per use), buffers {}",
        t.unique_params, t.mparams, t.params, t.buffers
    );
    let _ = writeln!(
        s,
        "total flops {} ({:.1} MFLOPs at {}x{})",
        t.flops, t.mflops, report.input.1, report.input.2
    );
    s
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

/// Parse the CSV produced by [`emit_report`]. Batch-norm rows regain their
/// running-statistic buffers, which always equal their parameter count.
pub fn parse_csv_report(text: &str, input: Chw) -> Result<CostReport> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows = rdr
        .deserialize::<CsvRow>()
        .map(|r| {
            let r = r.map_err(csv_err)?;
            Ok(CostRow {
                buffers: if r.kind == LayerKind::BatchNorm { r.params } else { 0 },
                path: r.layer,
                kind: r.kind,
                params: r.params,
                flops: r.flops,
                param_ids: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CostReport { input, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(path: &str, kind: LayerKind, params: u64, flops: u64) -> CostRow {
        CostRow {
            path: path.into(),
            kind,
            params,
            buffers: if kind == LayerKind::BatchNorm { params } else { 0 },
            flops,
            param_ids: Vec::new(),
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = CostReport {
            input: (3, 8, 8),
            rows: vec![],
        };
        assert_eq!(emit_report(&r, ReportFormat::Csv).unwrap(), "layer,kind,params,flops\n");
    }

    #[test]
    fn one_layer_one_row() {
        let r = CostReport {
            input: (4, 10, 10),
            rows: vec![row("conv", LayerKind::Conv, 288, 28_800)],
        };
        let csv = emit_report(&r, ReportFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().nth(1).unwrap(), "conv,conv,288,28800");
    }

    #[test]
    fn formats_agree_and_csv_round_trips() {
        let r = CostReport {
            input: (4, 10, 10),
            rows: vec![
                row("a.conv", LayerKind::Conv, 288, 28_800),
                row("a.bn", LayerKind::BatchNorm, 16, 0),
                row("attn", LayerKind::Attention, 0, 1234),
                row("head", LayerKind::Linear, 36, 32),
            ],
        };
        let csv = emit_report(&r, ReportFormat::Csv).unwrap();
        assert_eq!(parse_csv_report(&csv, r.input).unwrap(), r);

        let json: serde_json::Value = serde_json::from_str(&emit_report(&r, ReportFormat::Json).unwrap()).unwrap();
        assert_eq!(json["totals"]["params"], 340);
        assert_eq!(json["totals"]["flops"], 30_066);
        assert_eq!(json["rows"][0]["flops"], 28_800);

        let table = emit_report(&r, ReportFormat::Table).unwrap();
        for x in &r.rows {
            assert!(table.contains(&x.flops.to_string()));
        }
        assert!(table.contains("30066"));
    }
}
