//! Average relative rank of gold pairs within interaction matrices, and the
//! method × baseline grid built on it.

mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{ArrReport, Cell, Outcome, ReportMeta};

use crate::classifier::Checkpoint;
use crate::error::{Error, Result};
use crate::grammar::{CorpusItem, Grammar, LanguagePool, Pair};
use crate::interactions::{attribute, InteractionMatrix, Method, MethodConfig};
use crate::removal::{Background, BaselineKind, BaselineSpec, OutputMode, ValueFunction};
use crate::rng;

/// Whether `Γ_ii` competes in its own row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalMode {
    /// Include when the method defines the diagonal.
    #[default]
    Auto,
    Include,
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    #[default]
    Signed,
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ArrOptions {
    pub diagonal: DiagonalMode,
    pub rank: RankMode,
}

/// Fractional rank of `row[j]` among the candidate cells, ties sharing the
/// mean of their ranks, scaled to `[0, 1]`.
fn relative_rank(row: &[f64], i: usize, j: usize, include_diag: bool, rank: RankMode) -> f64 {
    let key = |v: f64| if rank == RankMode::Magnitude { v.abs() } else { v };
    let target = key(row[j]);
    let (mut below, mut equal, mut count) = (0usize, 0usize, 0usize);
    for (k, &v) in row.iter().enumerate() {
        if k == i && !include_diag {
            continue;
        }
        count += 1;
        let v = key(v);
        if v < target {
            below += 1;
        } else if v == target {
            equal += 1;
        }
    }
    if count < 2 {
        // The gold cell is the only candidate.
        return 1.0;
    }
    (below as f64 + (equal - 1) as f64 / 2.0) / (count - 1) as f64
}

/// ARR of `m` against unordered gold pairs, each read in both orientations.
pub fn arr(m: &InteractionMatrix, gold: &[Pair], opts: &ArrOptions) -> Result<f64> {
    let n = m.n;
    if n < 2 {
        return Err(Error::Invalid(format!("ARR needs at least 2 positions, got {n}")));
    }
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    let include = match opts.diagonal {
        DiagonalMode::Auto => m.diagonal_defined,
        DiagonalMode::Include => true,
        DiagonalMode::Exclude => false,
    };
    let mut total = 0.0;
    for &(i, j) in gold {
        if i >= n || j >= n || i == j {
            return Err(Error::Invalid(format!("gold pair ({i}, {j}) for {n} positions")));
        }
        total += relative_rank(m.row(i), i, j, include, opts.rank);
        total += relative_rank(m.row(j), j, i, include, opts.rank);
    }
    Ok(total / (2 * gold.len()) as f64)
}

/// Everything an evaluation cell reads.
#[derive(Clone, Copy)]
pub struct EvalSetup<'a> {
    pub checkpoint: &'a Checkpoint,
    pub grammar: &'a Grammar,
    pub background: &'a Background,
    pub pool: &'a LanguagePool,
    pub output: OutputMode,
    pub samples: usize,
    pub length_match: bool,
    pub methods: &'a MethodConfig,
    pub arr: ArrOptions,
}

/// Mean ARR of one cell plus per-item detail.
#[derive(Debug, Clone, PartialEq)]
pub struct CellScore {
    pub arr: f64,
    pub per_item: Vec<f64>,
    pub fallbacks: usize,
}

// Keyed by content, so results do not depend on item order.
fn item_seed(seed: u64, tokens: &[usize]) -> u64 {
    let mut parts = vec![seed, rng::label_id("item")];
    parts.extend(tokens.iter().map(|&t| t as u64));
    rng::task_id(&parts)
}

/// ARR of `method` under `baseline` (`None` for baseline-free methods) for
/// one item.
pub fn evaluate_item(
    method: Method,
    baseline: Option<BaselineKind>,
    setup: &EvalSetup,
    item: &CorpusItem,
    seed: u64,
) -> Result<(f64, usize, InteractionMatrix)> {
    if !method.supports(baseline) {
        let b = baseline.map_or("no", BaselineKind::name);
        return Err(Error::Unsupported(format!("{} with {b} baseline", method.name())));
    }
    let spec = BaselineSpec {
        // Ignored by baseline-free methods.
        kind: baseline.unwrap_or(BaselineKind::StaticZero),
        samples: setup.samples,
        length_match: setup.length_match,
    };
    let vf = ValueFunction::new(&setup.checkpoint.model, setup.grammar, spec)
        .with_output(setup.output)
        .with_background(setup.background)
        .with_pool(setup.pool);
    let a = attribute(method, &vf, &item.tokens, item_seed(seed, &item.tokens), setup.methods)?;
    let score = arr(&a.matrix, &item.gold_pairs, &setup.arr)?;
    Ok((score, a.fallbacks, a.matrix))
}

/// Mean ARR over `items`. Refuses checkpoints that are not perfect on both
/// splits.
pub fn evaluate_corpus(
    method: Method,
    baseline: Option<BaselineKind>,
    setup: &EvalSetup,
    items: &[&CorpusItem],
    seed: u64,
) -> Result<CellScore> {
    setup.checkpoint.ensure_converged()?;
    if items.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let scored: Vec<(f64, usize)> = items
        .par_iter()
        .map(|item| evaluate_item(method, baseline, setup, item, seed).map(|(a, f, _)| (a, f)))
        .collect::<Result<_>>()?;
    let per_item: Vec<f64> = scored.iter().map(|s| s.0).collect();
    Ok(CellScore {
        arr: per_item.iter().sum::<f64>() / per_item.len() as f64,
        fallbacks: scored.iter().map(|s| s.1).sum(),
        per_item,
    })
}

/// Items usable for ARR: at least two positions and a gold pair.
pub fn evaluation_items<'a>(items: impl IntoIterator<Item = &'a CorpusItem>) -> Vec<&'a CorpusItem> {
    items.into_iter().filter(|i| i.tokens.len() >= 2 && !i.gold_pairs.is_empty()).collect()
}

/// Every `(method, column)` cell. Unsupported cells are marked, never
/// scored; a failing cell records its error and the grid carries on.
pub fn run_grid(
    methods: &[Method],
    columns: &[Option<BaselineKind>],
    setup: &EvalSetup,
    items: &[&CorpusItem],
    seed: u64,
    keep_items: bool,
) -> Result<Vec<Cell>> {
    setup.checkpoint.ensure_converged()?;
    let mut cells = Vec::new();
    for &method in methods {
        for &baseline in columns {
            let outcome = if !method.supports(baseline) {
                Outcome::Unsupported
            } else {
                match evaluate_corpus(method, baseline, setup, items, seed) {
                    Ok(s) => Outcome::Score {
                        arr: s.arr,
                        items: s.per_item.len(),
                        fallbacks: s.fallbacks,
                        per_item: keep_items.then_some(s.per_item),
                    },
                    Err(e) => {
                        log::warn!("cell {} × {:?} failed: {e}", method.name(), baseline);
                        Outcome::Failed { error: e.to_string() }
                    }
                }
            };
            cells.push(Cell { method, baseline, outcome });
        }
    }
    Ok(cells)
}
