//! The declarative run description. One TOML file, one section per stage.

use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fidam_core::arr::{ArrOptions, DiagonalMode, RankMode};
use fidam_core::classifier::{Arch, ModelConfig, TrainConfig};
use fidam_core::grammar::{build_grammar, Grammar, GrammarParams};
use fidam_core::interactions::{Method, MethodConfig};
use fidam_core::removal::{BaselineKind, OutputMode};

/// A configuration problem. Reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub language: LanguageConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub attribution: AttributionConfig,
    #[serde(default)]
    pub methods: MethodConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageConfig {
    /// `identity_rule`, `dyck2`, `palindrome` or `custom`.
    pub name: String,
    /// Well-formed strings sampled; as many corrupted ones are added.
    pub corpus_size: usize,
    /// Fraction of items in the training split.
    pub train_fraction: f64,
    pub symbols: Option<usize>,
    pub max_length: Option<usize>,
    pub max_depth: Option<usize>,
    pub stop_prob: Option<f64>,
    pub middle_marker: bool,
    pub map_seed: u64,
    /// Production table for `custom`, relative to the config file.
    pub table: Option<PathBuf>,
    /// Sentential-form budget when enumerating a custom language.
    pub pool_limit: usize,
}

impl Default for LanguageConfig {
    fn default() -> Self {
        Self {
            name: "identity_rule".into(),
            corpus_size: 1000,
            train_fraction: 0.8,
            symbols: None,
            max_length: None,
            max_depth: None,
            stop_prob: None,
            middle_marker: false,
            map_seed: 0,
            table: None,
            pool_limit: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Arch,
    /// Defaults to the alphabet size.
    pub embedding_dim: Option<usize>,
    pub hidden_dim: usize,
    pub heads: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { arch: Arch::Lstm, embedding_dim: None, hidden_dim: 20, heads: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    pub methods: Vec<Method>,
    pub baselines: Vec<BaselineKind>,
    /// Monte-Carlo draws for stochastic baselines.
    pub samples: usize,
    pub length_match: bool,
    pub output: OutputMode,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            baselines: BaselineKind::ALL.to_vec(),
            samples: 100,
            length_match: true,
            output: OutputMode::LogitWellformed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    #[default]
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub split: EvalSplit,
    /// Seeded subsample of the evaluation items.
    pub max_items: Option<usize>,
    pub diagonal: DiagonalMode,
    pub rank: RankMode,
    /// Keep per-item ARR in the JSON report.
    pub per_item: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            split: EvalSplit::Test,
            max_items: None,
            diagonal: DiagonalMode::Auto,
            rank: RankMode::Signed,
            per_item: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Any of `csv`, `json`, `markdown`.
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default"), formats: vec!["csv".into(), "json".into(), "markdown".into()] }
    }
}

impl EvaluationConfig {
    pub fn arr_options(&self) -> ArrOptions {
        ArrOptions { diagonal: self.diagonal, rank: self.rank }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).with_context(|| path.display().to_string())?;
        // Relative table paths are relative to the config file.
        if let (Some(t), Some(dir)) = (&cfg.language.table, path.parent()) {
            if t.is_relative() {
                cfg.language.table = Some(dir.join(t));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hash of everything that affects results (the output block does not).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        sha256_hex(c.to_toml().as_bytes())
    }

    pub fn grammar_params(&self) -> anyhow::Result<GrammarParams> {
        let l = &self.language;
        let table = match &l.table {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?),
            None => None,
        };
        Ok(GrammarParams {
            symbols: l.symbols,
            max_length: l.max_length,
            max_depth: l.max_depth,
            stop_prob: l.stop_prob,
            middle_marker: l.middle_marker,
            map_seed: l.map_seed,
            table,
        })
    }

    pub fn grammar(&self) -> anyhow::Result<Grammar> {
        build_grammar(&self.language.name, &self.grammar_params()?).map_err(|e| config_err(e.to_string()))
    }

    pub fn model_config(&self, g: &Grammar) -> ModelConfig {
        let mut m = ModelConfig::for_grammar(g, self.model.arch);
        if let Some(e) = self.model.embedding_dim {
            m.embedding_dim = e;
        }
        m.hidden_dim = self.model.hidden_dim;
        m.heads = self.model.heads;
        m
    }

    /// Columns of the result table: the no-baseline column first when a
    /// baseline-free method is selected.
    pub fn columns(&self) -> Vec<Option<BaselineKind>> {
        let mut cols = Vec::new();
        if self.attribution.methods.iter().any(|m| m.baseline_free()) {
            cols.push(None);
        }
        cols.extend(self.attribution.baselines.iter().copied().map(Some));
        cols
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seed > i64::MAX as u64 || self.language.map_seed > i64::MAX as u64 {
            return Err(config_err("seeds must be below 2^63"));
        }
        let g = self.grammar()?;
        let l = &self.language;
        if l.corpus_size == 0 {
            return Err(config_err("language.corpus_size must be positive"));
        }
        if !(l.train_fraction > 0.0 && l.train_fraction < 1.0) {
            return Err(config_err(format!("language.train_fraction {} outside (0, 1)", l.train_fraction)));
        }
        self.model_config(&g).validate().map_err(|e| config_err(format!("model: {e}")))?;
        if self.training.epochs == 0 || self.training.batch_size == 0 || !(self.training.lr > 0.0) {
            return Err(config_err("training needs epochs, batch_size and lr > 0"));
        }
        self.methods.validate().map_err(|e| config_err(format!("methods: {e}")))?;
        let a = &self.attribution;
        if a.methods.is_empty() {
            return Err(config_err("attribution.methods is empty"));
        }
        if a.samples == 0 && a.baselines.iter().any(|b| b.is_stochastic()) {
            return Err(config_err("attribution.samples must be at least 1 for stochastic baselines"));
        }
        if a.baselines.contains(&BaselineKind::StaticMap) && g.static_map.is_none() {
            return Err(config_err(format!("static_map baseline selected but `{}` defines no T", g.name)));
        }
        if self.evaluation.max_items == Some(0) {
            return Err(config_err("evaluation.max_items must be positive"));
        }
        for f in &self.output.formats {
            if !matches!(f.as_str(), "csv" | "json" | "markdown") {
                return Err(config_err(format!("unknown output format `{f}`")));
            }
        }
        Ok(())
    }

    /// Applies a comma-separated `--methods` override.
    pub fn set_methods(&mut self, list: &str) -> anyhow::Result<()> {
        self.attribution.methods = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| Method::from_name(s).map_err(|e| config_err(e.to_string())))
            .collect::<anyhow::Result<_>>()?;
        Ok(())
    }

    pub fn set_baselines(&mut self, list: &str) -> anyhow::Result<()> {
        self.attribution.baselines = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| BaselineKind::from_name(s).map_err(|e| config_err(e.to_string())))
            .collect::<anyhow::Result<_>>()?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
