//! Uniform rendering of row-shaped results as an aligned table, CSV or JSON.

use clap::ValueEnum;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Csv,
    Json,
}

impl From<Format> for cvit::analytics::ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => Self::Table,
            Format::Csv => Self::Csv,
            Format::Json => Self::Json,
        }
    }
}

pub struct Rows {
    pub headers: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

fn cell(v: &Value, round: bool) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(f) if round && n.is_f64() => float(f),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

fn float(f: f64) -> String {
    if f == 0.0 {
        "0".into()
    } else if f.abs() < 1e-3 || f.abs() >= 1e9 {
        format!("{f:.3e}")
    } else {
        format!("{f:.6}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Rows {
    pub fn new(headers: Vec<&'static str>) -> Self {
        Self {
            headers,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let obj: Map<String, Value> = self
                        .headers
                        .iter()
                        .map(|h| h.to_string())
                        .zip(r.iter().cloned())
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(&self.to_json()).unwrap_or_default() + "\n",
            Format::Csv => {
                let mut out = self.headers.join(",") + "\n";
                for r in &self.rows {
                    let cells: Vec<String> = r.iter().map(|v| csv_field(&cell(v, false))).collect();
                    out.push_str(&cells.join(","));
                    out.push('\n');
                }
                out
            }
            Format::Table => {
                let cells: Vec<Vec<String>> = self
                    .rows
                    .iter()
                    .map(|r| r.iter().map(|v| cell(v, true)).collect())
                    .collect();
                let widths: Vec<usize> = (0..self.headers.len())
                    .map(|i| {
                        cells
                            .iter()
                            .map(|r| r[i].len())
                            .chain([self.headers[i].len()])
                            .max()
                            .unwrap_or(0)
                    })
                    .collect();
                let line = |items: Vec<&str>| {
                    items
                        .iter()
                        .zip(&widths)
                        .map(|(s, w)| format!("{s:<w$}"))
                        .collect::<Vec<_>>()
                        .join("  ")
                        .trim_end()
                        .to_string()
                        + "\n"
                };
                let mut out = line(self.headers.clone());
                for r in &cells {
                    out.push_str(&line(r.iter().map(String::as_str).collect()));
                }
                out
            }
        }
    }
}
