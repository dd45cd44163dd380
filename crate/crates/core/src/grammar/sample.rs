use rand::Rng as _;

use super::{Corpus, CorpusItem, Grammar, Label, Symbol};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy)]
pub struct SamplingOptions {
    /// Total derivation attempts allowed per requested string.
    pub attempts_per_item: usize,
    /// Derivations expanding more nonterminals than this are rejected.
    pub expansion_limit: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self { attempts_per_item: 1000, expansion_limit: 4096 }
    }
}

/// One leftmost derivation. Returns `None` when the derivation breaks the
/// length or depth cap; the caller rejects and restarts.
fn derive(g: &Grammar, rng: &mut Rng, opts: &SamplingOptions) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack = vec![(Symbol::Nonterminal(0), 0usize)];
    let mut expansions = 0;
    while let Some((sym, depth)) = stack.pop() {
        match sym {
            Symbol::Terminal(t) => {
                out.push(t);
                if out.len() > g.max_length {
                    return None;
                }
            }
            Symbol::Nonterminal(nt) => {
                expansions += 1;
                if expansions > opts.expansion_limit {
                    return None;
                }
                let prod = choose(g, nt, rng);
                let child_depth = if prod.emits_terminals() {
                    if g.max_depth.is_some_and(|cap| depth + 1 > cap) {
                        return None;
                    }
                    depth + 1
                } else {
                    depth
                };
                for s in prod.rhs.iter().rev() {
                    stack.push((*s, child_depth));
                }
            }
        }
    }
    (out.len() >= g.min_length).then_some(out)
}

fn choose<'g>(g: &'g Grammar, nt: usize, rng: &mut Rng) -> &'g super::Production {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for p in g.productions.iter().filter(|p| p.lhs == nt) {
        acc += p.prob;
        last = Some(p);
        if u < acc {
            return p;
        }
    }
    last.expect("validated grammar has productions for every nonterminal")
}

/// Draws `size` well-formed strings (with replacement) by rejection sampling.
pub fn sample_corpus(g: &Grammar, size: usize, seed: u64) -> Result<Corpus> {
    sample_corpus_with(g, size, seed, &SamplingOptions::default())
}

pub fn sample_corpus_with(
    g: &Grammar,
    size: usize,
    seed: u64,
    opts: &SamplingOptions,
) -> Result<Corpus> {
    if size == 0 {
        return Err(Error::Invalid("corpus size must be at least 1".into()));
    }
    let mut rng = rng::stream(seed, rng::label_id("sample"));
    let budget = opts.attempts_per_item.saturating_mul(size);
    let mut positive = Vec::with_capacity(size);
    let mut attempts = 0;
    while positive.len() < size {
        if attempts >= budget {
            return Err(Error::SamplingBudget { attempts, accepted: positive.len(), wanted: size });
        }
        attempts += 1;
        if let Some(tokens) = derive(g, &mut rng, opts) {
            let gold_pairs = g.gold_pairs(&tokens)?;
            positive.push(CorpusItem { tokens, label: Label::WellFormed, gold_pairs });
        }
    }
    Ok(Corpus { positive, negative: Vec::new(), split: None, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{build_grammar, parse_grammar, GrammarParams};

    #[test]
    fn identity_rule_strings_repeat_first_symbol() {
        let g = build_grammar("identity_rule", &GrammarParams::default()).unwrap();
        let c = sample_corpus(&g, 1000, 1).unwrap();
        assert_eq!(c.positive.len(), 1000);
        for item in &c.positive {
            assert_eq!(item.tokens[0], item.tokens[1]);
            assert!(item.tokens.len() <= 20 && item.tokens.len() >= 2);
            assert_eq!(item.gold_pairs, vec![(0, 1)]);
        }
    }

    #[test]
    fn dyck_strings_are_balanced_and_shallow() {
        let g = build_grammar("dyck2", &GrammarParams::default()).unwrap();
        let c = sample_corpus(&g, 15000, 2).unwrap();
        assert_eq!(c.positive.len(), 15000);
        for item in &c.positive {
            assert!(g.accepts(&item.tokens), "{}", g.render(&item.tokens));
            assert!(item.tokens.len() <= 20);
        }
        // Some strings actually reach the depth cap.
        let deep = c.positive.iter().any(|it| {
            let mut d = 0i32;
            let mut max = 0;
            for &t in &it.tokens {
                d += if t % 2 == 0 { 1 } else { -1 };
                max = max.max(d);
            }
            max == 4
        });
        assert!(deep);
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = build_grammar("palindrome", &GrammarParams::default()).unwrap();
        assert_eq!(sample_corpus(&g, 200, 9).unwrap(), sample_corpus(&g, 200, 9).unwrap());
        assert_ne!(sample_corpus(&g, 200, 9).unwrap(), sample_corpus(&g, 200, 10).unwrap());
    }

    #[test]
    fn impossible_length_exhausts_budget() {
        // Every derivation has length >= 3 but the cap is 2.
        let g = parse_grammar("%max_length 2\nS -> a a S : 0.5\nS -> a a a : 0.5\n", "t").unwrap();
        let opts = SamplingOptions { attempts_per_item: 10, ..Default::default() };
        let err = sample_corpus_with(&g, 5, 1, &opts).unwrap_err();
        assert!(matches!(err, Error::SamplingBudget { accepted: 0, .. }), "{err}");
    }
}
