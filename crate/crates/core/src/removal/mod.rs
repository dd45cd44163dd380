//! Value functions `v(x_S)`: model output on a partial input whose absent
//! positions are filled by a removal strategy.

mod background;
mod expected;
mod game;

use serde::{Deserialize, Serialize};

pub use background::Background;
pub use expected::{draw_backgrounds, expected_attribution};
pub use game::{Game, StaticBaseline};

use crate::classifier::Model;
use crate::error::{Error, Result};
use crate::grammar::{Grammar, LanguagePool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    StaticZero,
    StaticMap,
    ExpectedPos,
    ExpectedNeg,
    IntervUnigram,
    IntervPositional,
    IntervJoint,
    Observational,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 8] = [
        BaselineKind::StaticZero,
        BaselineKind::StaticMap,
        BaselineKind::ExpectedPos,
        BaselineKind::ExpectedNeg,
        BaselineKind::IntervUnigram,
        BaselineKind::IntervPositional,
        BaselineKind::IntervJoint,
        BaselineKind::Observational,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::StaticZero => "static_zero",
            BaselineKind::StaticMap => "static_map",
            BaselineKind::ExpectedPos => "expected_pos",
            BaselineKind::ExpectedNeg => "expected_neg",
            BaselineKind::IntervUnigram => "interv_unigram",
            BaselineKind::IntervPositional => "interv_positional",
            BaselineKind::IntervJoint => "interv_joint",
            BaselineKind::Observational => "observational",
        }
    }

    /// Short column label as used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::StaticZero => "0",
            BaselineKind::StaticMap => "T(x)",
            BaselineKind::ExpectedPos => "D+",
            BaselineKind::ExpectedNeg => "D-",
            BaselineKind::IntervUnigram => "P(x_i)",
            BaselineKind::IntervPositional => "P(x_i|i)",
            BaselineKind::IntervJoint => "P(x_\\S)",
            BaselineKind::Observational => "P(x_\\S|x_S)",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        let kind = match name.trim() {
            "static_zero" | "zero" => BaselineKind::StaticZero,
            "static_map" | "map" => BaselineKind::StaticMap,
            "expected_pos" | "d+" => BaselineKind::ExpectedPos,
            "expected_neg" | "d-" => BaselineKind::ExpectedNeg,
            "interv_unigram" | "unigram" => BaselineKind::IntervUnigram,
            "interv_positional" | "positional" => BaselineKind::IntervPositional,
            "interv_joint" | "joint" => BaselineKind::IntervJoint,
            "observational" => BaselineKind::Observational,
            other => return Err(Error::Baseline(format!("unknown baseline kind `{other}`"))),
        };
        Ok(kind)
    }

    pub fn is_static(self) -> bool {
        matches!(self, BaselineKind::StaticZero | BaselineKind::StaticMap)
    }

    pub fn is_expected(self) -> bool {
        matches!(self, BaselineKind::ExpectedPos | BaselineKind::ExpectedNeg)
    }

    pub fn is_interventional(self) -> bool {
        matches!(
            self,
            BaselineKind::IntervUnigram | BaselineKind::IntervPositional | BaselineKind::IntervJoint
        )
    }

    pub fn is_stochastic(self) -> bool {
        !self.is_static()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    /// Monte-Carlo draws for stochastic kinds.
    pub samples: usize,
    /// Restrict background and joint draws to strings of the input's length.
    pub length_match: bool,
}

impl BaselineSpec {
    pub fn new(kind: BaselineKind) -> Self {
        Self { kind, samples: 100, length_match: true }
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }
}

/// Which scalar of the classifier output the value function reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    #[default]
    LogitWellformed,
    ProbWellformed,
    LogitDiff,
}

impl OutputMode {
    pub fn apply(self, logits: [f64; 2]) -> f64 {
        match self {
            OutputMode::LogitWellformed => logits[1],
            OutputMode::LogitDiff => logits[1] - logits[0],
            OutputMode::ProbWellformed => 1.0 / (1.0 + (logits[0] - logits[1]).exp()),
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "logit_wellformed" => Ok(OutputMode::LogitWellformed),
            "prob_wellformed" => Ok(OutputMode::ProbWellformed),
            "logit_diff" => Ok(OutputMode::LogitDiff),
            other => Err(Error::Invalid(format!("unknown output mode `{other}`"))),
        }
    }
}

/// Present positions `S` out of `n`, as a bitmask (bit `i` set = present).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureSubset {
    pub mask: u32,
    pub n: usize,
}

pub const MAX_FEATURES: usize = 32;

pub fn full_mask(n: usize) -> u32 {
    if n >= 32 {
        u32::MAX
    } else {
        (1u32 << n) - 1
    }
}

impl FeatureSubset {
    pub fn new(mask: u32, n: usize) -> Result<Self> {
        if n > MAX_FEATURES {
            return Err(Error::Invalid(format!("at most {MAX_FEATURES} positions supported, got {n}")));
        }
        if mask & !full_mask(n) != 0 {
            return Err(Error::Invalid(format!("subset {mask:#b} has positions outside [0, {n})")));
        }
        Ok(Self { mask, n })
    }

    pub fn full(n: usize) -> Self {
        Self { mask: full_mask(n), n }
    }

    pub fn empty(n: usize) -> Self {
        Self { mask: 0, n }
    }

    pub fn from_positions(n: usize, positions: &[usize]) -> Result<Self> {
        let mut mask = 0u32;
        for &i in positions {
            if i >= n {
                return Err(Error::Invalid(format!("position {i} outside [0, {n})")));
            }
            mask |= 1 << i;
        }
        Self::new(mask, n)
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.n && self.mask >> i & 1 == 1
    }

    pub fn without(&self, positions: &[usize]) -> Self {
        let mut mask = self.mask;
        for &i in positions {
            mask &= !(1u32 << i);
        }
        Self { mask, n: self.n }
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&i| self.contains(i))
    }
}

/// A removal strategy bound to a model.
#[derive(Clone, Copy)]
pub struct ValueFunction<'a> {
    pub model: &'a Model,
    pub grammar: &'a Grammar,
    pub baseline: BaselineSpec,
    pub output: OutputMode,
    /// Required by the stochastic kinds.
    pub background: Option<&'a Background>,
    /// Required by the observational kind.
    pub pool: Option<&'a LanguagePool>,
}

impl<'a> ValueFunction<'a> {
    pub fn new(model: &'a Model, grammar: &'a Grammar, baseline: BaselineSpec) -> Self {
        Self { model, grammar, baseline, output: OutputMode::default(), background: None, pool: None }
    }

    pub fn with_background(mut self, background: &'a Background) -> Self {
        self.background = Some(background);
        self
    }

    pub fn with_pool(mut self, pool: &'a LanguagePool) -> Self {
        self.pool = Some(pool);
        self
    }

    pub fn with_output(mut self, output: OutputMode) -> Self {
        self.output = output;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.baseline.kind;
        if kind == BaselineKind::StaticMap && self.grammar.static_map.is_none() {
            return Err(Error::Baseline(format!("grammar `{}` defines no static map T", self.grammar.name)));
        }
        if kind.is_stochastic() {
            if self.baseline.samples == 0 {
                return Err(Error::Baseline(format!("{} needs samples >= 1", kind.name())));
            }
            if self.background.is_none() {
                return Err(Error::Baseline(format!("{} needs a background corpus", kind.name())));
            }
        }
        if kind == BaselineKind::Observational && self.pool.is_none() {
            return Err(Error::Baseline("observational baseline needs a language pool".into()));
        }
        Ok(())
    }

    /// Prepares the per-item game for `x`. Expected kinds have no single
    /// game; use [`expected_attribution`] or [`Game::with_static`].
    pub fn game(&self, x: &[usize], seed: u64) -> Result<Game<'a>> {
        Game::new(*self, x, seed)
    }

    /// `v(x_S)`.
    pub fn value(&self, x: &[usize], s: FeatureSubset, seed: u64) -> Result<f64> {
        if s.n != x.len() {
            return Err(Error::Invalid(format!("subset over {} positions for input of length {}", s.n, x.len())));
        }
        self.game(x, seed)?.value(s.mask)
    }
}

/// Uniform draw among the pool strings of length `|x|` that agree with `x`
/// on `s`; returns that string's tokens at the absent positions.
pub fn observational_complete(pool: &LanguagePool, x: &[usize], s: FeatureSubset, seed: u64) -> Result<Vec<usize>> {
    if s.n != x.len() {
        return Err(Error::Invalid(format!("subset over {} positions for input of length {}", s.n, x.len())));
    }
    let mut r = crate::rng::stream(seed, crate::rng::task_id(&[crate::rng::label_id("complete"), u64::from(s.mask)]));
    let m = pool.sample_match(x, s.mask, &mut r).ok_or(Error::EmptyMatchSet)?;
    Ok((0..x.len()).filter(|&i| !s.contains(i)).map(|i| m[i]).collect())
}
