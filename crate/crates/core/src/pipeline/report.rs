use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub case_id: String,
    pub dsc_mean: f64,
    pub dsc_max: f64,
    pub dsc_max_lcc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub dsc_mean: f64,
    pub dsc_max: f64,
    pub dsc_max_lcc: f64,
}

/// Per-case Dice for mean, max and max + largest-component reconstructions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub average: EvalSummary,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let avg = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let average = EvalSummary {
            dsc_mean: avg(|r| r.dsc_mean),
            dsc_max: avg(|r| r.dsc_max),
            dsc_max_lcc: avg(|r| r.dsc_max_lcc),
        };
        Self { rows, average }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("evaluation report: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Aligned plain-text table with an `Average` row.
    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.case_id.len())
            .chain(["Average".len(), "Case".len()])
            .max()
            .unwrap_or(4);
        let mut out = String::new();
        let line = |out: &mut String, id: &str, a: f64, b: f64, c: f64| {
            writeln!(out, "{id:<width$}  {a:>6.4}  {b:>6.4}  {c:>9.4}").unwrap();
        };
        writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>9}", "Case", "Mean", "Max", "Max + LCC").unwrap();
        for r in &self.rows {
            line(&mut out, &r.case_id, r.dsc_mean, r.dsc_max, r.dsc_max_lcc);
        }
        let a = &self.average;
        line(&mut out, "Average", a.dsc_mean, a.dsc_max, a.dsc_max_lcc);
        out
    }
}
