//! Pairwise interaction methods. Each maps an input (through a value
//! function or a differentiable model) to an `N×N` score matrix.

mod archipelago;
mod dump;
mod hessian;
mod shapley;

use serde::{Deserialize, Serialize};

pub use archipelago::{archipelago, archipelago_with, Detection};
pub use dump::{parse_matrix, read_matrix, write_matrix, MatrixHeader};
pub use hessian::{
    hessian, hessian_scores, hessian_x_input, integrated_hessians, integrated_hessians_scores, output_node,
};
pub use shapley::{group_ablation, sii, sii_matrix, stii, stii_matrix};

use crate::error::{Error, Result};
use crate::removal::{
    draw_backgrounds, full_mask, BaselineKind, Game, StaticBaseline, ValueFunction,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GroupAblation,
    Archipelago,
    Sii,
    Stii,
    Hessian,
    HessianXInput,
    IntegratedHessians,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::GroupAblation,
        Method::Archipelago,
        Method::Sii,
        Method::Stii,
        Method::Hessian,
        Method::HessianXInput,
        Method::IntegratedHessians,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::GroupAblation => "group_ablation",
            Method::Archipelago => "archipelago",
            Method::Sii => "sii",
            Method::Stii => "stii",
            Method::Hessian => "hessian",
            Method::HessianXInput => "hessian_x_input",
            Method::IntegratedHessians => "integrated_hessians",
        }
    }

    /// Row label as used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::GroupAblation => "Group Ablation",
            Method::Archipelago => "Archipelago",
            Method::Sii => "SII",
            Method::Stii => "STII",
            Method::Hessian => "Hessian",
            Method::HessianXInput => "Hessian x Input",
            Method::IntegratedHessians => "IH",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        let m = match name.trim() {
            "group_ablation" | "ga" => Method::GroupAblation,
            "archipelago" => Method::Archipelago,
            "sii" => Method::Sii,
            "stii" => Method::Stii,
            "hessian" => Method::Hessian,
            "hessian_x_input" | "hxi" => Method::HessianXInput,
            "integrated_hessians" | "ih" => Method::IntegratedHessians,
            other => return Err(Error::Invalid(format!("unknown method `{other}`"))),
        };
        Ok(m)
    }

    /// Methods that read the model's derivatives and take no removal baseline.
    pub fn baseline_free(self) -> bool {
        matches!(self, Method::Hessian | Method::HessianXInput)
    }

    /// Whether the `(method, baseline)` cell is defined. `None` is the
    /// no-baseline column.
    pub fn supports(self, baseline: Option<BaselineKind>) -> bool {
        match (self, baseline) {
            (Method::Hessian | Method::HessianXInput, b) => b.is_none(),
            (_, None) => false,
            (Method::GroupAblation | Method::Sii | Method::Stii, Some(_)) => true,
            (Method::Archipelago | Method::IntegratedHessians, Some(k)) => k.is_static() || k.is_expected(),
        }
    }

    /// Whether the method assigns a meaningful score to `Γ_ii`.
    pub fn defines_diagonal(self) -> bool {
        !matches!(self, Method::Archipelago | Method::Sii)
    }
}

/// `N×N` interaction scores for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    pub n: usize,
    /// Row-major.
    pub scores: Vec<f64>,
    pub method: Method,
    pub baseline: Option<BaselineKind>,
    pub diagonal_defined: bool,
}

impl InteractionMatrix {
    pub fn new(n: usize, scores: Vec<f64>, method: Method, baseline: Option<BaselineKind>) -> Result<Self> {
        if scores.len() != n * n {
            return Err(Error::Shape(format!("{} scores for a {n}×{n} matrix", scores.len())));
        }
        Ok(Self { n, scores, method, baseline, diagonal_defined: method.defines_diagonal() })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.scores[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.n..(i + 1) * self.n]
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Replaces the matrix by `(Γ + Γᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        for i in 0..self.n {
            for j in i + 1..self.n {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, v);
                self.set(j, i, v);
            }
        }
    }

    /// Elementwise mean of matrices of equal shape.
    pub fn mean(items: &[InteractionMatrix]) -> Result<InteractionMatrix> {
        let first = items.first().ok_or_else(|| Error::Invalid("mean of no matrices".into()))?;
        let mut out = first.clone();
        for m in &items[1..] {
            if m.n != first.n {
                return Err(Error::Shape(format!("mean over {}×{} and {}×{}", first.n, first.n, m.n, m.n)));
            }
            for (o, v) in out.scores.iter_mut().zip(&m.scores) {
                *o += v;
            }
        }
        let k = items.len() as f64;
        for o in &mut out.scores {
            *o /= k;
        }
        Ok(out)
    }

    /// Applies the position relabelling `perm` (new position `perm[i]` holds
    /// old position `i`).
    pub fn permuted(&self, perm: &[usize]) -> InteractionMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                out.set(perm[i], perm[j], self.get(i, j));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoalitionMode {
    /// Exact up to the cap, permutation sampling above it.
    #[default]
    Auto,
    Exact,
    Sampled,
}

/// How a `d×d` cross block collapses to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HessianAggregation {
    /// `(Σ_ab H_ab)²`.
    #[default]
    SumThenSquare,
    /// `Σ_ab H_ab²`.
    SumOfSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub coalition_mode: CoalitionMode,
    pub exact_cap: usize,
    /// Permutations drawn in sampled mode.
    pub permutations: usize,
    pub ih_steps: usize,
    pub stii_order: usize,
    /// Fraction of pairs (by detection strength) merged into sets.
    pub archipelago_threshold: f64,
    pub hessian_aggregation: HessianAggregation,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            coalition_mode: CoalitionMode::Auto,
            exact_cap: 14,
            permutations: 200,
            ih_steps: 64,
            stii_order: 2,
            archipelago_threshold: 0.2,
            hessian_aggregation: HessianAggregation::SumThenSquare,
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stii_order != 2 {
            return Err(Error::Unsupported(format!("STII order {} (only pairwise order 2)", self.stii_order)));
        }
        if self.ih_steps == 0 {
            return Err(Error::Invalid("ih_steps must be at least 1".into()));
        }
        if self.permutations == 0 {
            return Err(Error::Invalid("permutations must be at least 1".into()));
        }
        if !(self.archipelago_threshold > 0.0 && self.archipelago_threshold <= 1.0) {
            return Err(Error::Invalid(format!(
                "archipelago_threshold {} outside (0, 1]",
                self.archipelago_threshold
            )));
        }
        Ok(())
    }

    /// Whether coalition methods enumerate all subsets for `n` positions.
    pub fn exact_for(&self, n: usize) -> Result<bool> {
        match self.coalition_mode {
            CoalitionMode::Auto => Ok(n <= self.exact_cap),
            CoalitionMode::Sampled => Ok(false),
            CoalitionMode::Exact if n <= self.exact_cap => Ok(true),
            CoalitionMode::Exact => Err(Error::ExactCap { n, cap: self.exact_cap }),
        }
    }
}

/// A set function over the positions of one input.
pub trait Coalitions: Sync {
    fn n(&self) -> usize;

    fn values(&self, masks: &[u32]) -> Result<Vec<f64>>;

    fn value(&self, mask: u32) -> Result<f64> {
        Ok(self.values(&[mask])?[0])
    }

    /// All `2^n` values indexed by mask.
    fn table(&self) -> Result<Vec<f64>> {
        let masks: Vec<u32> = (0..=full_mask(self.n())).collect();
        self.values(&masks)
    }
}

impl Coalitions for Game<'_> {
    fn n(&self) -> usize {
        Game::n(self)
    }

    fn values(&self, masks: &[u32]) -> Result<Vec<f64>> {
        Game::values(self, masks)
    }

    fn table(&self) -> Result<Vec<f64>> {
        Game::table(self)
    }
}

/// A game given by its full table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableGame {
    pub n: usize,
    pub table: Vec<f64>,
}

impl TableGame {
    pub fn new(n: usize, table: Vec<f64>) -> Result<Self> {
        if n > 24 || table.len() != 1usize << n {
            return Err(Error::Shape(format!("table of {} values for {n} players", table.len())));
        }
        Ok(Self { n, table })
    }

    pub fn from_fn(n: usize, f: impl Fn(u32) -> f64) -> Self {
        Self { n, table: (0..=full_mask(n)).map(f).collect() }
    }
}

impl Coalitions for TableGame {
    fn n(&self) -> usize {
        self.n
    }

    fn values(&self, masks: &[u32]) -> Result<Vec<f64>> {
        masks
            .iter()
            .map(|&m| {
                self.table
                    .get(m as usize)
                    .copied()
                    .ok_or_else(|| Error::Invalid(format!("subset {m:#b} outside {} players", self.n)))
            })
            .collect()
    }

    fn table(&self) -> Result<Vec<f64>> {
        Ok(self.table.clone())
    }
}

/// A matrix plus bookkeeping from the value function.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub matrix: InteractionMatrix,
    /// Observational evaluations that fell back to joint fillers.
    pub fallbacks: usize,
}

/// Runs `method` on `x` under the value function's baseline, dispatching
/// expected kinds to an average over static draws. Baseline-free methods
/// ignore the baseline.
pub fn attribute(method: Method, vf: &ValueFunction, x: &[usize], seed: u64, cfg: &MethodConfig) -> Result<Attribution> {
    cfg.validate()?;
    let kind = vf.baseline.kind;
    if method.baseline_free() {
        let matrix = match method {
            Method::Hessian => hessian(vf.model, x, vf.output, cfg)?,
            _ => hessian_x_input(vf.model, x, vf.output, cfg)?,
        };
        return Ok(Attribution { matrix, fallbacks: 0 });
    }
    if !method.supports(Some(kind)) {
        return Err(Error::Unsupported(format!("{} with {} baseline", method.name(), kind.name())));
    }
    let seed = crate::rng::task_id(&[seed, crate::rng::label_id(method.name())]);
    if kind.is_expected() {
        let matrix = crate::removal::expected_attribution(vf, x, seed, |b| with_static(method, vf, x, b, seed, cfg))?;
        return Ok(Attribution { matrix, fallbacks: 0 });
    }
    match method {
        Method::Archipelago | Method::IntegratedHessians => {
            let b = static_baseline(vf, x)?;
            let matrix = with_static(method, vf, x, &b, seed, cfg)?;
            Ok(Attribution { matrix, fallbacks: 0 })
        }
        _ => {
            let game = vf.game(x, seed)?;
            let mut matrix = coalition_method(method, &game, seed, cfg)?;
            matrix.baseline = Some(kind);
            Ok(Attribution { matrix, fallbacks: game.fallbacks() })
        }
    }
}

fn static_baseline(vf: &ValueFunction, x: &[usize]) -> Result<StaticBaseline> {
    match vf.baseline.kind {
        BaselineKind::StaticZero => Ok(StaticBaseline::Zero),
        BaselineKind::StaticMap => Ok(StaticBaseline::Tokens(vf.grammar.map_tokens(x)?)),
        k => Err(Error::Unsupported(format!("{} is not a static baseline", k.name()))),
    }
}

fn with_static(
    method: Method,
    vf: &ValueFunction,
    x: &[usize],
    b: &StaticBaseline,
    seed: u64,
    cfg: &MethodConfig,
) -> Result<InteractionMatrix> {
    let mut m = match method {
        Method::IntegratedHessians => integrated_hessians(vf.model, x, b, vf.output, cfg)?,
        Method::Archipelago => archipelago(&Game::with_static(*vf, x, b)?, cfg)?,
        _ => coalition_method(method, &Game::with_static(*vf, x, b)?, seed, cfg)?,
    };
    m.baseline = Some(vf.baseline.kind);
    Ok(m)
}

fn coalition_method<C: Coalitions>(method: Method, game: &C, seed: u64, cfg: &MethodConfig) -> Result<InteractionMatrix> {
    match method {
        Method::GroupAblation => group_ablation(game),
        Method::Sii => sii_matrix(game, seed, cfg),
        Method::Stii => stii_matrix(game, seed, cfg),
        Method::Archipelago => archipelago(game, cfg),
        other => Err(Error::Unsupported(format!("{} is not a coalition method", other.name()))),
    }
}

/// Draws used by an expected baseline, exposed for reporting.
pub fn expected_draws(vf: &ValueFunction, x: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    draw_backgrounds(vf, x, seed)
}
