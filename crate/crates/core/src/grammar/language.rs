//! Membership, gold dependency pairs and minimal corruption per language.

use std::collections::HashSet;

use rand::Rng as _;

use super::{Corpus, CorpusItem, Grammar, Label, LanguageKind, Pair, Symbol};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const CORRUPT_ATTEMPTS: usize = 1000;

impl Grammar {
    /// Language membership, including the length and depth caps.
    pub fn accepts(&self, tokens: &[usize]) -> bool {
        let n = tokens.len();
        if n < self.min_length || n > self.max_length || tokens.iter().any(|&t| t >= self.alphabet.len()) {
            return false;
        }
        match self.kind {
            LanguageKind::IdentityRule => tokens[0] == tokens[1],
            LanguageKind::Dyck2 => dyck_matching(tokens, self.max_depth).is_some(),
            LanguageKind::Palindrome => self.palindrome_ok(tokens),
            LanguageKind::Custom => earley_accepts(self, tokens),
        }
    }

    fn base_of(&self, t: usize) -> Option<usize> {
        self.homomorphism.as_ref()?.get(t)?.map(|_| t)
    }

    fn h(&self, t: usize) -> Option<usize> {
        *self.homomorphism.as_ref()?.get(t)?
    }

    fn palindrome_ok(&self, tokens: &[usize]) -> bool {
        let n = tokens.len();
        match self.middle_marker {
            Some(m) => {
                if n % 2 == 0 || tokens[n / 2] != m {
                    return false;
                }
            }
            None => {
                if n % 2 == 1 {
                    return false;
                }
            }
        }
        (0..n / 2).all(|i| {
            self.base_of(tokens[i]).is_some() && self.h(tokens[i]) == Some(tokens[n - 1 - i])
        })
    }

    /// Dependency pairs the grammar imposes on a well-formed string.
    pub fn gold_pairs(&self, tokens: &[usize]) -> Result<Vec<Pair>> {
        let n = tokens.len();
        let mut pairs = match self.kind {
            LanguageKind::IdentityRule => {
                if n < 2 {
                    return Err(Error::Invalid("identity rule string shorter than 2".into()));
                }
                vec![(0, 1)]
            }
            LanguageKind::Dyck2 => dyck_matching(tokens, None)
                .ok_or_else(|| Error::Invalid("unbalanced bracket string has no gold pairs".into()))?,
            LanguageKind::Palindrome => (0..n / 2).map(|i| (i, n - 1 - i)).collect(),
            LanguageKind::Custom => Vec::new(),
        };
        pairs.sort_unstable();
        Ok(pairs)
    }

    /// Minimal corruption of a well-formed item: one token changed so the
    /// string leaves the language. Gold pairs are carried over.
    pub fn corrupt(&self, item: &CorpusItem, rng: &mut Rng) -> Result<CorpusItem> {
        let mut tokens = item.tokens.clone();
        let n = tokens.len();
        match self.kind {
            LanguageKind::IdentityRule => {
                if n < 2 {
                    return Err(Error::Corrupt("identity rule item shorter than 2".into()));
                }
                let k = self.alphabet.len();
                if k < 2 {
                    return Err(Error::Corrupt("single-symbol alphabet".into()));
                }
                let pos = rng.gen_range(0..2);
                let other = tokens[1 - pos];
                let choices: Vec<usize> = (0..k).filter(|&s| s != other).collect();
                tokens[pos] = choices[rng.gen_range(0..choices.len())];
            }
            LanguageKind::Palindrome => {
                if n < 2 {
                    return Err(Error::Corrupt("palindrome item shorter than 2".into()));
                }
                let k = self.homomorphism.as_ref().map_or(0, |h| h.iter().flatten().count());
                // Second half only, skipping a middle marker.
                let start = n.div_ceil(2);
                let pos = rng.gen_range(start..n);
                let mirror = tokens[n - 1 - pos];
                let base: Vec<usize> = (0..self.alphabet.len())
                    .filter(|&s| self.h(s).is_some() && s != mirror)
                    .collect();
                if base.is_empty() || k < 2 {
                    return Err(Error::Corrupt("palindrome alphabet too small".into()));
                }
                let y = base[rng.gen_range(0..base.len())];
                tokens[pos] = self.h(y).expect("base symbol has an image");
            }
            LanguageKind::Dyck2 | LanguageKind::Custom => {
                if n == 0 {
                    return Err(Error::Corrupt("empty item".into()));
                }
                let k = self.alphabet.len();
                let mut found = false;
                for _ in 0..CORRUPT_ATTEMPTS {
                    let pos = rng.gen_range(0..n);
                    let mut sym = rng.gen_range(0..k - 1);
                    if sym >= item.tokens[pos] {
                        sym += 1;
                    }
                    tokens.clone_from(&item.tokens);
                    tokens[pos] = sym;
                    if !self.accepts(&tokens) {
                        found = true;
                        break;
                    }
                }
                if !found {
                    return Err(Error::Corrupt(format!(
                        "no single-token flip of `{}` leaves the language",
                        self.render(&item.tokens)
                    )));
                }
            }
        }
        Ok(CorpusItem { tokens, label: Label::Corrupted, gold_pairs: item.gold_pairs.clone() })
    }
}

/// Matching bracket pairs if `tokens` is balanced (and within `max_depth`).
/// Even symbols open, odd symbols close, `2k` matches `2k+1`.
pub(crate) fn dyck_matching(tokens: &[usize], max_depth: Option<usize>) -> Option<Vec<Pair>> {
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let mut pairs = Vec::with_capacity(tokens.len() / 2);
    for (i, &t) in tokens.iter().enumerate() {
        if t > 3 {
            return None;
        }
        if t % 2 == 0 {
            stack.push((i, t));
            if max_depth.is_some_and(|d| stack.len() > d) {
                return None;
            }
        } else {
            let (j, open) = stack.pop()?;
            if open + 1 != t {
                return None;
            }
            pairs.push((j, i));
        }
    }
    stack.is_empty().then_some(pairs)
}

/// Builds `D⁻`: negative `k` corrupts positive `k`.
pub fn add_negatives(corpus: &Corpus, g: &Grammar, seed: u64) -> Result<Corpus> {
    let negative = corpus
        .positive
        .iter()
        .enumerate()
        .map(|(k, item)| {
            let mut rng = rng::stream(seed, rng::task_id(&[rng::label_id("corrupt"), k as u64]));
            g.corrupt(item, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { negative, split: None, ..corpus.clone() })
}

/// Earley recognizer over the grammar's productions (ignores `max_depth`).
pub(crate) fn earley_accepts(g: &Grammar, tokens: &[usize]) -> bool {
    let nullable = nullable_set(g);
    // (production, dot, origin)
    let mut sets: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); tokens.len() + 1];
    let mut seen: Vec<HashSet<(usize, usize, usize)>> = vec![HashSet::new(); tokens.len() + 1];
    let add = |sets: &mut Vec<Vec<_>>, seen: &mut Vec<HashSet<_>>, k: usize, item| {
        if seen[k].insert(item) {
            sets[k].push(item);
        }
    };
    for (pi, p) in g.productions.iter().enumerate() {
        if p.lhs == 0 {
            add(&mut sets, &mut seen, 0, (pi, 0, 0));
        }
    }
    for k in 0..=tokens.len() {
        let mut idx = 0;
        while idx < sets[k].len() {
            let (pi, dot, origin) = sets[k][idx];
            idx += 1;
            let prod = &g.productions[pi];
            match prod.rhs.get(dot) {
                Some(Symbol::Nonterminal(nt)) => {
                    for (qi, q) in g.productions.iter().enumerate() {
                        if q.lhs == *nt {
                            add(&mut sets, &mut seen, k, (qi, 0, k));
                        }
                    }
                    if nullable[*nt] {
                        add(&mut sets, &mut seen, k, (pi, dot + 1, origin));
                    }
                }
                Some(Symbol::Terminal(t)) => {
                    if k < tokens.len() && tokens[k] == *t {
                        add(&mut sets, &mut seen, k + 1, (pi, dot + 1, origin));
                    }
                }
                None => {
                    let lhs = prod.lhs;
                    let parents: Vec<_> = sets[origin]
                        .iter()
                        .filter(|(qi, qd, _)| {
                            g.productions[*qi].rhs.get(*qd) == Some(&Symbol::Nonterminal(lhs))
                        })
                        .copied()
                        .collect();
                    for (qi, qd, qo) in parents {
                        add(&mut sets, &mut seen, k, (qi, qd + 1, qo));
                    }
                }
            }
        }
    }
    sets[tokens.len()]
        .iter()
        .any(|&(pi, dot, origin)| origin == 0 && g.productions[pi].lhs == 0 && dot == g.productions[pi].rhs.len())
}

fn nullable_set(g: &Grammar) -> Vec<bool> {
    let mut nullable = vec![false; g.nonterminals.len()];
    loop {
        let mut changed = false;
        for p in &g.productions {
            if !nullable[p.lhs]
                && p.rhs.iter().all(|s| matches!(s, Symbol::Nonterminal(n) if nullable[*n]))
            {
                nullable[p.lhs] = true;
                changed = true;
            }
        }
        if !changed {
            return nullable;
        }
    }
}
