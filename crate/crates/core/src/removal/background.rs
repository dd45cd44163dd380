use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::grammar::{Corpus, Label};
use crate::rng::Rng;

/// Token statistics and strings from the training split, used by the
/// stochastic removal strategies.
#[derive(Debug, Clone)]
pub struct Background {
    vocab: usize,
    unigram: WeightedIndex<f64>,
    /// Per position; `None` where no training string is that long.
    positional: Vec<Option<WeightedIndex<f64>>>,
    strings: Vec<Vec<usize>>,
    labels: Vec<Label>,
}

impl Background {
    pub fn from_corpus(corpus: &Corpus, vocab: usize) -> Result<Self> {
        let train = corpus.train_items()?;
        if train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let longest = train.iter().map(|it| it.tokens.len()).max().unwrap_or(0);
        let mut uni = vec![0.0; vocab];
        let mut pos = vec![vec![0.0; vocab]; longest];
        for it in &train {
            for (i, &t) in it.tokens.iter().enumerate() {
                if t >= vocab {
                    return Err(Error::UnknownToken { token: t, vocab });
                }
                uni[t] += 1.0;
                pos[i][t] += 1.0;
            }
        }
        let unigram = WeightedIndex::new(&uni).map_err(|e| Error::Baseline(format!("unigram table: {e}")))?;
        let positional = pos.iter().map(|w| WeightedIndex::new(w).ok()).collect();
        Ok(Self {
            vocab,
            unigram,
            positional,
            strings: train.iter().map(|it| it.tokens.clone()).collect(),
            labels: train.iter().map(|it| it.label).collect(),
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn draw_unigram(&self, rng: &mut Rng) -> usize {
        self.unigram.sample(rng)
    }

    /// Position-conditioned draw; positions beyond every training string
    /// fall back to the unigram table.
    pub fn draw_positional(&self, i: usize, rng: &mut Rng) -> usize {
        match self.positional.get(i) {
            Some(Some(d)) => d.sample(rng),
            _ => self.unigram.sample(rng),
        }
    }

    /// Training strings usable as fillers for an input of length `n`:
    /// exactly length `n`, or at least `n` (to be truncated) without length
    /// matching. `label` restricts to one class.
    pub fn candidates(&self, n: usize, label: Option<Label>, length_match: bool) -> Vec<&[usize]> {
        self.strings
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| label.map_or(true, |want| **l == want))
            .filter(|(s, _)| if length_match { s.len() == n } else { s.len() >= n })
            .map(|(s, _)| &s[..n])
            .collect()
    }

    /// `count` uniform draws (with replacement) from [`Self::candidates`].
    pub fn draw_strings(
        &self,
        n: usize,
        label: Option<Label>,
        length_match: bool,
        count: usize,
        rng: &mut Rng,
    ) -> Result<Vec<Vec<usize>>> {
        let pool = self.candidates(n, label, length_match);
        if pool.is_empty() {
            let which = match label {
                Some(Label::WellFormed) => "well-formed ",
                Some(Label::Corrupted) => "corrupted ",
                None => "",
            };
            return Err(Error::Baseline(format!("no {which}training string of length {n} to draw from")));
        }
        Ok((0..count).map(|_| pool[rng.gen_range(0..pool.len())].to_vec()).collect())
    }
}
