use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::pipeline::CellResult;
use crate::error::{Error, Result};
use crate::federated::TrainMode;

/// Version string written into every result table.
pub const VERSION: &str = concat!("vflhlp v", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
    pub n: usize,
}

impl CellStat {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }

    pub fn display(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    /// One entry per aligned count; `None` when every seed failed.
    pub cells: Vec<Option<CellStat>>,
}

/// Mean ± std of test AUC per (variant, aligned count), with paired
/// VFLHLP-minus-vanilla rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub aligned_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bayes_auc: Option<f64>,
    pub rows: Vec<TableRow>,
    pub deltas: Vec<TableRow>,
    /// Every per-seed outcome, failures included.
    pub cells: Vec<CellResult>,
}

pub const BASELINE: &str = "vanilla_vfl";

impl ResultTable {
    /// `labels` fixes row order; cells are grouped by label and count.
    pub fn build(
        config_hash: &str,
        seeds: &[u64],
        aligned_counts: &[usize],
        labels: &[(String, TrainMode)],
        cells: Vec<CellResult>,
        bayes_auc: Option<f64>,
    ) -> Self {
        let mut by_key: BTreeMap<(String, usize), BTreeMap<u64, f64>> = BTreeMap::new();
        for c in &cells {
            if let Some(a) = c.test_auc {
                by_key.entry((c.label.clone(), c.aligned_count)).or_default().insert(c.seed, a);
            }
        }
        let empty = BTreeMap::new();
        let get = |label: &str, a: usize| by_key.get(&(label.to_string(), a)).unwrap_or(&empty);
        let rows = labels
            .iter()
            .map(|(label, _)| TableRow {
                label: label.clone(),
                cells: aligned_counts
                    .iter()
                    .map(|&a| CellStat::from_values(&get(label, a).values().copied().collect::<Vec<_>>()))
                    .collect(),
            })
            .collect();
        let has_baseline = labels.iter().any(|(l, _)| l == BASELINE);
        let deltas = labels
            .iter()
            .filter(|(_, m)| has_baseline && *m == TrainMode::Vflhlp)
            .map(|(label, _)| TableRow {
                label: format!("delta({label}-{BASELINE})"),
                cells: aligned_counts
                    .iter()
                    .map(|&a| {
                        let base = get(BASELINE, a);
                        let diffs: Vec<f64> = get(label, a)
                            .iter()
                            .filter_map(|(s, v)| base.get(s).map(|b| v - b))
                            .collect();
                        CellStat::from_values(&diffs)
                    })
                    .collect(),
            })
            .collect();
        Self {
            version: VERSION.into(),
            config_hash: config_hash.into(),
            seeds: seeds.to_vec(),
            aligned_counts: aligned_counts.to_vec(),
            bayes_auc,
            rows,
            deltas,
            cells,
        }
    }

    pub fn row(&self, label: &str) -> Option<&TableRow> {
        self.rows.iter().chain(&self.deltas).find(|r| r.label == label)
    }

    /// Mean AUC of `label` at `aligned`.
    pub fn mean(&self, label: &str, aligned: usize) -> Option<f64> {
        let i = self.aligned_counts.iter().position(|&a| a == aligned)?;
        self.row(label)?.cells[i].map(|c| c.mean)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| c.error.is_some())
    }

    /// One CSV row per (row label, aligned count).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let seeds = self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
        let csv_err = |e: csv::Error| Error::Data(format!("writing results: {e}"));
        w.write_record(["row", "aligned_count", "mean", "std", "n", "summary", "config_hash", "seeds", "version"])
            .map_err(csv_err)?;
        for row in self.rows.iter().chain(&self.deltas) {
            for (a, cell) in self.aligned_counts.iter().zip(&row.cells) {
                let (mean, std, n, summary) = match cell {
                    Some(c) => (format!("{:.3}", c.mean), format!("{:.3}", c.std), c.n.to_string(), c.display()),
                    None => (String::new(), String::new(), "0".into(), "missing".into()),
                };
                w.write_record([
                    row.label.as_str(),
                    &a.to_string(),
                    &mean,
                    &std,
                    &n,
                    &summary,
                    &self.config_hash,
                    &seeds,
                    &self.version,
                ])
                .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("writing results: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Human-readable grid for logs.
    pub fn render(&self) -> String {
        let mut out = format!("{:<24}", "aligned");
        for a in &self.aligned_counts {
            out += &format!("{a:>16}");
        }
        out.push('\n');
        for row in self.rows.iter().chain(&self.deltas) {
            out += &format!("{:<24}", row.label);
            for c in &row.cells {
                out += &format!("{:>16}", c.map_or("missing".to_string(), |c| c.display()));
            }
            out.push('\n');
        }
        if let Some(b) = self.bayes_auc {
            out += &format!("bayes ceiling: {b:.3}\n");
        }
        out
    }
}
