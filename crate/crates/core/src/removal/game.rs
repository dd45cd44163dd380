use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;

use super::{full_mask, BaselineKind, ValueFunction};
use crate::classifier::{Arch, LstmState};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::grammar::Label;
use crate::rng;

/// A fixed replacement input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StaticBaseline {
    /// Zero embedding rows.
    Zero,
    /// Embeddings of these tokens (same length as the input).
    Tokens(Vec<usize>),
}

#[derive(Debug)]
enum Fill {
    Zero,
    /// `v(S)` is the mean over these filler strings. Interventional kinds draw
    /// them once per item, so every subset sees the same draws.
    Tokens(Vec<Vec<usize>>),
    Observational,
}

/// Largest input for which a full `2^N` table may be requested.
pub const MAX_TABLE_FEATURES: usize = 24;

/// `v` restricted to one input: subsets of its positions map to reals.
pub struct Game<'a> {
    vf: ValueFunction<'a>,
    x: Vec<usize>,
    seed: u64,
    fill: Fill,
    memo: Mutex<HashMap<u32, f64>>,
    forwards: Mutex<HashMap<Vec<usize>, f64>>,
    joint: OnceLock<std::result::Result<Vec<Vec<usize>>, String>>,
    fallbacks: AtomicUsize,
}

impl<'a> Game<'a> {
    pub(super) fn new(vf: ValueFunction<'a>, x: &[usize], seed: u64) -> Result<Self> {
        vf.validate()?;
        let spec = vf.baseline;
        let n = x.len();
        let fill = match spec.kind {
            BaselineKind::StaticZero => Fill::Zero,
            BaselineKind::StaticMap => Fill::Tokens(vec![vf.grammar.map_tokens(x)?]),
            BaselineKind::ExpectedPos | BaselineKind::ExpectedNeg => {
                return Err(Error::Unsupported(format!(
                    "{} averages whole attributions over static draws; it has no single value function",
                    spec.kind.name()
                )))
            }
            BaselineKind::IntervUnigram | BaselineKind::IntervPositional | BaselineKind::IntervJoint => {
                let bg = vf.background.expect("validated");
                let mut r = rng::stream(seed, rng::task_id(&[rng::label_id("fillers"), rng::label_id(spec.kind.name())]));
                let fillers = match spec.kind {
                    BaselineKind::IntervUnigram => {
                        (0..spec.samples).map(|_| (0..n).map(|_| bg.draw_unigram(&mut r)).collect()).collect()
                    }
                    BaselineKind::IntervPositional => (0..spec.samples)
                        .map(|_| (0..n).map(|i| bg.draw_positional(i, &mut r)).collect())
                        .collect(),
                    _ => bg.draw_strings(n, None, spec.length_match, spec.samples, &mut r)?,
                };
                Fill::Tokens(fillers)
            }
            BaselineKind::Observational => Fill::Observational,
        };
        Self::build(vf, x, seed, fill)
    }

    /// Game with a single static baseline, whatever the value function's
    /// configured kind.
    pub fn with_static(vf: ValueFunction<'a>, x: &[usize], baseline: &StaticBaseline) -> Result<Self> {
        let fill = match baseline {
            StaticBaseline::Zero => Fill::Zero,
            StaticBaseline::Tokens(t) => {
                if t.len() != x.len() {
                    return Err(Error::Baseline(format!(
                        "baseline of length {} for input of length {}",
                        t.len(),
                        x.len()
                    )));
                }
                Fill::Tokens(vec![t.clone()])
            }
        };
        Self::build(vf, x, 0, fill)
    }

    fn build(vf: ValueFunction<'a>, x: &[usize], seed: u64, fill: Fill) -> Result<Self> {
        if x.is_empty() || x.len() > super::MAX_FEATURES {
            return Err(Error::Invalid(format!("inputs need 1..={} positions, got {}", super::MAX_FEATURES, x.len())));
        }
        let vocab = vf.model.config().vocab.len();
        let bad = x.iter().copied().chain(match &fill {
            Fill::Tokens(f) => f.iter().flatten().copied().collect::<Vec<_>>(),
            _ => Vec::new(),
        });
        for t in bad {
            if t >= vocab {
                return Err(Error::UnknownToken { token: t, vocab });
            }
        }
        Ok(Self {
            vf,
            x: x.to_vec(),
            seed,
            fill,
            memo: Mutex::new(HashMap::new()),
            forwards: Mutex::new(HashMap::new()),
            joint: OnceLock::new(),
            fallbacks: AtomicUsize::new(0),
        })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.x
    }

    pub fn value_function(&self) -> &ValueFunction<'a> {
        &self.vf
    }

    /// Observational evaluations whose match set was empty and that used
    /// joint fillers instead.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }

    pub fn full(&self) -> u32 {
        full_mask(self.n())
    }

    pub fn value(&self, mask: u32) -> Result<f64> {
        Ok(self.values(&[mask])?[0])
    }

    /// Values for a batch of subsets, memoized.
    pub fn values(&self, masks: &[u32]) -> Result<Vec<f64>> {
        let full = self.full();
        if let Some(&m) = masks.iter().find(|&&m| m & !full != 0) {
            return Err(Error::Invalid(format!("subset {m:#b} outside {} positions", self.n())));
        }
        let mut out = vec![f64::NAN; masks.len()];
        let mut missing: Vec<u32> = Vec::new();
        {
            let memo = self.memo.lock().expect("memo lock");
            for (o, m) in out.iter_mut().zip(masks) {
                match memo.get(m) {
                    Some(&v) => *o = v,
                    None => missing.push(*m),
                }
            }
        }
        if !missing.is_empty() {
            missing.sort_unstable();
            missing.dedup();
            let computed = self.compute(&missing)?;
            let mut memo = self.memo.lock().expect("memo lock");
            for (&m, &v) in missing.iter().zip(&computed) {
                memo.insert(m, v);
            }
            for (o, m) in out.iter_mut().zip(masks) {
                if o.is_nan() {
                    *o = memo[m];
                }
            }
        }
        Ok(out)
    }

    /// `v` on all `2^N` subsets, indexed by mask.
    pub fn table(&self) -> Result<Vec<f64>> {
        let n = self.n();
        if n > MAX_TABLE_FEATURES {
            return Err(Error::ExactCap { n, cap: MAX_TABLE_FEATURES });
        }
        let masks: Vec<u32> = (0..=self.full()).collect();
        self.compute(&masks)
    }

    fn compute(&self, masks: &[u32]) -> Result<Vec<f64>> {
        // Nothing removed: one plain forward, not a mean of identical ones.
        let full = self.full();
        if let Some(k) = masks.iter().position(|&m| m == full) {
            let mut rest = masks.to_vec();
            rest.remove(k);
            let mut out = self.compute(&rest)?;
            out.insert(k, self.forward_cached(&self.x)?);
            return Ok(out);
        }
        match &self.fill {
            Fill::Zero => self.mean_over_fills(&[None], masks),
            Fill::Tokens(fillers) => {
                let fills: Vec<Option<&[usize]>> = fillers.iter().map(|f| Some(f.as_slice())).collect();
                self.mean_over_fills(&fills, masks)
            }
            Fill::Observational => masks.par_iter().map(|&m| self.observational(m)).collect(),
        }
    }

    fn mean_over_fills(&self, fills: &[Option<&[usize]>], masks: &[u32]) -> Result<Vec<f64>> {
        let per_fill: Vec<Vec<f64>> = fills
            .par_iter()
            .map(|f| self.eval_fill(*f, masks))
            .collect::<Result<_>>()?;
        let k = fills.len() as f64;
        let mut out = vec![0.0; masks.len()];
        for vals in &per_fill {
            for (o, v) in out.iter_mut().zip(vals) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= k;
        }
        Ok(out)
    }

    /// Model outputs on `x_S ∪ z_{\S}` for each mask, `z` a filler string or
    /// zero rows.
    fn eval_fill(&self, fill: Option<&[usize]>, masks: &[u32]) -> Result<Vec<f64>> {
        let model = self.vf.model;
        let mut out = vec![0.0; masks.len()];
        if model.config().arch == Arch::Lstm {
            // Prefix sharing: walk the binary trie of masks from position 0,
            // stepping the recurrence once per distinct prefix. Positions
            // where the filler equals the input do not branch.
            let same: u32 = match fill {
                Some(z) => (0..self.n()).filter(|&i| z[i] == self.x[i]).fold(0, |m, i| m | 1 << i),
                None => 0,
            };
            let mut items: Vec<(u32, u32, usize)> =
                masks.iter().enumerate().map(|(k, &m)| ((m & !same).reverse_bits(), m & !same, k)).collect();
            items.sort_unstable();
            let zero = vec![0.0; model.embedding_dim()];
            let state = LstmState::zero(model.config().hidden_dim);
            self.trie(0, &state, &items, fill, same, &zero, &mut out)?;
        } else {
            for (o, &m) in out.iter_mut().zip(masks) {
                let e = self.composite_embeddings(m, fill)?;
                *o = self.vf.output.apply(model.forward_from_embeddings(&e)?);
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn trie(
        &self,
        depth: usize,
        state: &LstmState,
        items: &[(u32, u32, usize)],
        fill: Option<&[usize]>,
        same: u32,
        zero: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        if items.is_empty() {
            return Ok(());
        }
        let model = self.vf.model;
        if depth == self.n() {
            let v = self.vf.output.apply(model.lstm_head(state));
            for &(_, _, k) in items {
                out[k] = v;
            }
            return Ok(());
        }
        let present_row = model.embedding_row(self.x[depth])?;
        if same >> depth & 1 == 1 {
            let next = model.lstm_step(state, present_row);
            return self.trie(depth + 1, &next, items, fill, same, zero, out);
        }
        let split = items.partition_point(|&(_, m, _)| m >> depth & 1 == 0);
        let (absent, present) = items.split_at(split);
        if !absent.is_empty() {
            let row = match fill {
                Some(z) => model.embedding_row(z[depth])?,
                None => zero,
            };
            let next = model.lstm_step(state, row);
            self.trie(depth + 1, &next, absent, fill, same, zero, out)?;
        }
        if !present.is_empty() {
            let next = model.lstm_step(state, present_row);
            self.trie(depth + 1, &next, present, fill, same, zero, out)?;
        }
        Ok(())
    }

    /// Embedding matrix of `x_S ∪ z_{\S}`.
    pub fn composite_embeddings(&self, mask: u32, fill: Option<&[usize]>) -> Result<Tensor> {
        let model = self.vf.model;
        let d = model.embedding_dim();
        let mut data = Vec::with_capacity(self.n() * d);
        for i in 0..self.n() {
            if mask >> i & 1 == 1 {
                data.extend_from_slice(model.embedding_row(self.x[i])?);
            } else {
                match fill {
                    Some(z) => data.extend_from_slice(model.embedding_row(z[i])?),
                    None => data.extend(std::iter::repeat(0.0).take(d)),
                }
            }
        }
        Tensor::matrix(self.n(), d, data)
    }

    fn forward_cached(&self, tokens: &[usize]) -> Result<f64> {
        if let Some(&v) = self.forwards.lock().expect("cache lock").get(tokens) {
            return Ok(v);
        }
        let v = self.vf.output.apply(self.vf.model.forward(tokens)?);
        self.forwards.lock().expect("cache lock").insert(tokens.to_vec(), v);
        Ok(v)
    }

    fn observational(&self, mask: u32) -> Result<f64> {
        let pool = self.vf.pool.expect("validated");
        let k = self.vf.baseline.samples;
        let count = pool.count_matches(&self.x, mask);
        let strings = if count == 0 {
            self.fallbacks.fetch_add(1, Ordering::Relaxed);
            let joint = self.joint.get_or_init(|| {
                let bg = self.vf.background.expect("validated");
                let mut r = rng::stream(
                    self.seed,
                    rng::task_id(&[rng::label_id("fillers"), rng::label_id("observational_fallback")]),
                );
                bg.draw_strings(self.n(), None, self.vf.baseline.length_match, k, &mut r)
                    .map_err(|e| e.to_string())
            });
            let fillers = joint.as_ref().map_err(|e| Error::Baseline(e.clone()))?;
            fillers
                .iter()
                .map(|z| (0..self.n()).map(|i| if mask >> i & 1 == 1 { self.x[i] } else { z[i] }).collect())
                .collect()
        } else if count <= k as u128 {
            pool.all_matches(&self.x, mask, k).ok_or(Error::EmptyMatchSet)?
        } else {
            let mut r = rng::stream(self.seed, rng::task_id(&[rng::label_id("observational"), u64::from(mask)]));
            (0..k)
                .map(|_| pool.sample_match(&self.x, mask, &mut r).ok_or(Error::EmptyMatchSet))
                .collect::<Result<Vec<_>>>()?
        };
        let mut total = 0.0;
        for s in &strings {
            total += self.forward_cached(s)?;
        }
        Ok(total / strings.len() as f64)
    }
}

/// Label of the background class drawn by an expected kind.
pub(super) fn expected_label(kind: BaselineKind) -> Option<Label> {
    match kind {
        BaselineKind::ExpectedPos => Some(Label::WellFormed),
        BaselineKind::ExpectedNeg => Some(Label::Corrupted),
        _ => None,
    }
}
