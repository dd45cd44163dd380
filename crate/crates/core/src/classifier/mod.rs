//! The grey-box sequence classifier: token embeddings, a single recurrent
//! (or attention) layer and a linear head producing two class logits.
//! Logit index 1 is the well-formed class.

mod bag;
mod checkpoint;
mod lstm;
mod train;
mod transformer;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use checkpoint::{file_sha256, load_checkpoint, save_checkpoint, Checkpoint, CorpusRef, CHECKPOINT_MAGIC};
pub use lstm::LstmState;
pub use train::{fit, train, AttemptSummary, TrainConfig, TrainingRecord};

use crate::diff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::grammar::{CorpusItem, Grammar};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    #[default]
    Lstm,
    Transformer,
    /// Order-free sum of per-token features; additive over positions.
    Bag,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Lstm => "lstm",
            Arch::Transformer => "transformer",
            Arch::Bag => "bag",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Token strings; index = token id. No special tokens are added.
    pub vocab: Vec<String>,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Attention heads (transformer only).
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Longest sequence the positional table covers (transformer only).
    #[serde(default)]
    pub max_positions: usize,
}

fn default_heads() -> usize {
    2
}

impl ModelConfig {
    /// Defaults for a grammar: embedding width equal to the alphabet size,
    /// hidden size 20, one layer.
    pub fn for_grammar(g: &Grammar, arch: Arch) -> Self {
        Self {
            arch,
            vocab: g.alphabet.clone(),
            embedding_dim: g.alphabet.len(),
            hidden_dim: 20,
            layers: 1,
            heads: 2,
            max_positions: g.max_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab.is_empty() || self.embedding_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Invalid("model dimensions must be positive".into()));
        }
        if self.layers != 1 {
            return Err(Error::Invalid(format!("only single-layer models are supported, got {}", self.layers)));
        }
        if self.arch == Arch::Transformer {
            if self.heads == 0 || self.hidden_dim % self.heads != 0 {
                return Err(Error::Invalid(format!(
                    "hidden_dim {} not divisible into {} heads",
                    self.hidden_dim, self.heads
                )));
            }
            if self.max_positions == 0 {
                return Err(Error::Invalid("transformer needs max_positions > 0".into()));
            }
        }
        Ok(())
    }

    /// Parameter names and shapes in canonical order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        match self.arch {
            Arch::Lstm => lstm::layout(self),
            Arch::Transformer => transformer::layout(self),
            Arch::Bag => bag::layout(self),
        }
    }
}

/// A classifier with concrete parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Tensor>,
}

impl Model {
    pub fn new(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::Shape(format!("expected {} parameter tensors, got {}", layout.len(), params.len())));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("parameter {name}: expected {shape:?}, got {:?}", p.shape())));
            }
        }
        Ok(Self { config, params })
    }

    /// Uniform(±1/√hidden) everywhere, plus 1 on the LSTM forget-gate bias.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let bound = 1.0 / (config.hidden_dim as f64).sqrt();
        let mut params: Vec<Tensor> = config
            .layout()
            .iter()
            .map(|(_, shape)| {
                let mut t = Tensor::zeros(shape);
                for v in t.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
                t
            })
            .collect();
        if config.arch == Arch::Lstm {
            lstm::bias_forget_gate(&config, &mut params);
        }
        Self::new(config, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.config.layout().iter().position(|(n, _)| n == name).map(|k| &self.params[k])
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn embedding_table(&self) -> &Tensor {
        &self.params[0]
    }

    pub fn embedding_row(&self, token: usize) -> Result<&[f64]> {
        let vocab = self.config.vocab.len();
        if token >= vocab {
            return Err(Error::UnknownToken { token, vocab });
        }
        Ok(self.params[0].row(token))
    }

    /// Embedding lookup: an `N×d` matrix.
    pub fn embed(&self, tokens: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(tokens.len() * self.embedding_dim());
        for &t in tokens {
            data.extend_from_slice(self.embedding_row(t)?);
        }
        Tensor::matrix(tokens.len(), self.embedding_dim(), data)
    }

    /// Class logits for a token sequence.
    pub fn forward(&self, tokens: &[usize]) -> Result<[f64; 2]> {
        self.forward_from_embeddings(&self.embed(tokens)?)
    }

    /// Class logits for an explicit `N×d` embedding matrix.
    pub fn forward_from_embeddings(&self, e: &Tensor) -> Result<[f64; 2]> {
        self.check_embeddings(e)?;
        match self.config.arch {
            Arch::Lstm => {
                let mut state = LstmState::zero(self.config.hidden_dim);
                for i in 0..e.rows() {
                    state = self.lstm_step(&state, e.row(i));
                }
                Ok(self.lstm_head(&state))
            }
            Arch::Transformer | Arch::Bag => {
                let mut tape = Tape::<f64>::new();
                let x = tape.constant(e.clone());
                let out = self.build_logits(&mut tape, x)?;
                let v = tape.value(out).data();
                Ok([v[0], v[1]])
            }
        }
    }

    fn check_embeddings(&self, e: &Tensor) -> Result<()> {
        if e.rank() != 2 || e.rows() == 0 {
            return Err(Error::Shape(format!("embeddings must be a non-empty N×d matrix, got {:?}", e.shape())));
        }
        if e.cols() != self.embedding_dim() {
            return Err(Error::EmbeddingWidth { got: e.cols(), expected: self.embedding_dim() });
        }
        if self.config.arch == Arch::Transformer && e.rows() > self.config.max_positions {
            return Err(Error::Invalid(format!(
                "sequence length {} exceeds max_positions {}",
                e.rows(),
                self.config.max_positions
            )));
        }
        Ok(())
    }

    /// Records the logits on `tape` for the embedding node `emb`, with the
    /// parameters as constants. Used for derivatives with respect to inputs.
    pub fn build_logits<T: Scalar>(&self, tape: &mut Tape<T>, emb: Var) -> Result<Var> {
        let e = tape.value(emb);
        if e.rank() != 2 || e.cols() != self.embedding_dim() {
            return Err(Error::EmbeddingWidth { got: e.cols(), expected: self.embedding_dim() });
        }
        let p: Vec<Var> = self.params.iter().map(|t| tape.constant(t.lift())).collect();
        self.build_with(tape, &p, emb)
    }

    pub(crate) fn build_with<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], emb: Var) -> Result<Var> {
        match self.config.arch {
            Arch::Lstm => lstm::build(&self.config, tape, p, emb),
            Arch::Transformer => transformer::build(&self.config, tape, p, emb),
            Arch::Bag => bag::build(&self.config, tape, p, emb),
        }
    }

    /// One recurrent step from `state` on embedding row `x` (LSTM only).
    pub fn lstm_step(&self, state: &LstmState, x: &[f64]) -> LstmState {
        debug_assert_eq!(self.config.arch, Arch::Lstm);
        lstm::step(&self.config, &self.params, state, x)
    }

    /// Head logits on an LSTM state.
    pub fn lstm_head(&self, state: &LstmState) -> [f64; 2] {
        lstm::head(&self.params, state)
    }

    pub fn predict(&self, tokens: &[usize]) -> Result<usize> {
        let z = self.forward(tokens)?;
        Ok(usize::from(z[1] > z[0]))
    }
}

/// Fraction of items whose argmax logit equals the label.
pub fn accuracy<'a>(model: &Model, items: impl IntoIterator<Item = &'a CorpusItem>) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for item in items {
        total += 1;
        if model.predict(&item.tokens)? == item.label.class() {
            hit += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(hit as f64 / total as f64)
}
