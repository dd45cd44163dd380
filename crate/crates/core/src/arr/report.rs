use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::interactions::Method;
use crate::removal::BaselineKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Score {
        arr: f64,
        items: usize,
        fallbacks: usize,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        per_item: Option<Vec<f64>>,
    },
    Unsupported,
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    /// `None` is the no-baseline column.
    pub baseline: Option<BaselineKind>,
    pub outcome: Outcome,
}

impl Cell {
    pub fn arr(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Score { arr, .. } => Some(arr),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub language: String,
    pub seed: u64,
    pub config_hash: String,
    pub corpus_sha256: String,
    pub checkpoint_sha256: String,
    pub items: usize,
}

/// A filled grid: one row per method, one column per baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrReport {
    pub meta: ReportMeta,
    pub methods: Vec<Method>,
    pub columns: Vec<Option<BaselineKind>>,
    pub cells: Vec<Cell>,
}

fn column_name(c: Option<BaselineKind>) -> &'static str {
    c.map_or("none", BaselineKind::name)
}

impl ArrReport {
    pub fn cell(&self, method: Method, baseline: Option<BaselineKind>) -> Option<&Cell> {
        self.cells.iter().find(|c| c.method == method && c.baseline == baseline)
    }

    pub fn arr(&self, method: Method, baseline: Option<BaselineKind>) -> Option<f64> {
        self.cell(method, baseline).and_then(Cell::arr)
    }

    /// Total observational fallbacks across all cells.
    pub fn fallbacks(&self) -> usize {
        self.cells
            .iter()
            .map(|c| match c.outcome {
                Outcome::Score { fallbacks, .. } => fallbacks,
                _ => 0,
            })
            .sum()
    }

    /// Absent cells are left empty; failed ones read `error`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# config={} seed={} language={}\n", self.meta.config_hash, self.meta.seed, self.meta.language);
        out.push_str("method");
        for &c in &self.columns {
            write!(out, ",{}", column_name(c)).expect("string write");
        }
        out.push('\n');
        for &m in &self.methods {
            out.push_str(m.name());
            for &c in &self.columns {
                out.push(',');
                match self.cell(m, c).map(|c| &c.outcome) {
                    Some(Outcome::Score { arr, .. }) => write!(out, "{arr:.6}").expect("string write"),
                    Some(Outcome::Failed { .. }) => out.push_str("error"),
                    _ => {}
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| |");
        for &c in &self.columns {
            write!(out, " {} |", c.map_or("NB", BaselineKind::label)).expect("string write");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.columns.len()));
        out.push('\n');
        for &m in &self.methods {
            write!(out, "| {} |", m.label()).expect("string write");
            for &c in &self.columns {
                match self.cell(m, c).map(|c| &c.outcome) {
                    Some(Outcome::Score { arr, .. }) => write!(out, " {arr:.3} |"),
                    Some(Outcome::Failed { .. }) => write!(out, " err |"),
                    _ => write!(out, " -- |"),
                }
                .expect("string write");
            }
            out.push('\n');
        }
        out
    }
}
