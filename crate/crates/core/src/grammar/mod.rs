//! Probabilistic context-free grammars for the built-in formal languages,
//! corpus generation, corruption and gold dependency structure.

mod corpus;
mod language;
mod pool;
mod sample;
mod text;

pub use corpus::{make_split, read_corpus, write_corpus, Corpus, CorpusItem, Label, Split};
pub use language::add_negatives;
pub use pool::{enumerate_language, read_pool, write_pool, LanguagePool};
pub use sample::{sample_corpus, sample_corpus_with, SamplingOptions};
pub use text::{parse_grammar, write_grammar};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on per-nonterminal probability mass.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Unordered position pair, stored with `i < j`.
pub type Pair = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageKind {
    IdentityRule,
    Dyck2,
    Palindrome,
    Custom,
}

impl LanguageKind {
    pub fn name(self) -> &'static str {
        match self {
            LanguageKind::IdentityRule => "identity_rule",
            LanguageKind::Dyck2 => "dyck2",
            LanguageKind::Palindrome => "palindrome",
            LanguageKind::Custom => "custom",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "identity_rule" | "identity" => LanguageKind::IdentityRule,
            "dyck2" | "dyck" => LanguageKind::Dyck2,
            "palindrome" => LanguageKind::Palindrome,
            "custom" => LanguageKind::Custom,
            other => return Err(Error::UnknownGrammar(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Terminal(usize),
    Nonterminal(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Production {
    pub lhs: usize,
    pub rhs: Vec<Symbol>,
    pub prob: f64,
}

impl Production {
    /// Productions that emit terminals open a new nesting level for the
    /// nonterminals they wrap.
    pub fn emits_terminals(&self) -> bool {
        self.rhs.iter().any(|s| matches!(s, Symbol::Terminal(_)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    pub name: String,
    pub kind: LanguageKind,
    pub alphabet: Vec<String>,
    /// Index 0 is the start symbol.
    pub nonterminals: Vec<String>,
    pub productions: Vec<Production>,
    pub max_length: usize,
    pub min_length: usize,
    /// Cap on the nesting depth of terminal-emitting productions.
    pub max_depth: Option<usize>,
    /// Symbol bijection used by the `T(x)` static baseline.
    pub static_map: Option<Vec<usize>>,
    /// Second-half mapping `h` of the palindrome language, indexed by symbol.
    pub homomorphism: Option<Vec<Option<usize>>>,
    pub middle_marker: Option<usize>,
}

/// Size and length settings for [`build_grammar`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrammarParams {
    pub symbols: Option<usize>,
    pub max_length: Option<usize>,
    pub max_depth: Option<usize>,
    /// Probability of the terminating production of the recursive rule.
    pub stop_prob: Option<f64>,
    pub middle_marker: bool,
    /// Seed of the random symbol permutation behind the palindrome `T(x)`.
    pub map_seed: u64,
    /// Production table text, required for `custom`.
    pub table: Option<String>,
}

pub fn build_grammar(name: &str, params: &GrammarParams) -> Result<Grammar> {
    let kind = LanguageKind::from_name(name)?;
    let grammar = match kind {
        LanguageKind::IdentityRule => identity_rule(params)?,
        LanguageKind::Dyck2 => dyck2(params)?,
        LanguageKind::Palindrome => palindrome(params)?,
        LanguageKind::Custom => {
            let table = params.table.as_deref().ok_or_else(|| {
                Error::InvalidGrammar("custom grammar requires a production table".into())
            })?;
            let mut g = parse_grammar(table, "<custom>")?;
            if let Some(max_length) = params.max_length {
                g.max_length = max_length;
            }
            if params.max_depth.is_some() {
                g.max_depth = params.max_depth;
            }
            g
        }
    };
    grammar.validate()?;
    Ok(grammar)
}

fn letters(count: usize, upper: bool) -> Result<Vec<String>> {
    if count == 0 || count > 26 {
        return Err(Error::InvalidGrammar(format!(
            "symbol count {count} outside 1..=26"
        )));
    }
    let base = if upper { b'A' } else { b'a' };
    Ok((0..count).map(|i| ((base + i as u8) as char).to_string()).collect())
}

fn check_stop(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidGrammar(format!("stop probability {p} outside (0, 1)")));
    }
    Ok(p)
}

fn identity_rule(params: &GrammarParams) -> Result<Grammar> {
    let k = params.symbols.unwrap_or(3);
    let alphabet = letters(k, false)?;
    let stop = check_stop(params.stop_prob.unwrap_or(0.2))?;
    let mut productions = Vec::new();
    // S -> x x A
    for x in 0..k {
        productions.push(Production {
            lhs: 0,
            rhs: vec![Symbol::Terminal(x), Symbol::Terminal(x), Symbol::Nonterminal(1)],
            prob: 1.0 / k as f64,
        });
    }
    // A -> x A | eps
    for x in 0..k {
        productions.push(Production {
            lhs: 1,
            rhs: vec![Symbol::Terminal(x), Symbol::Nonterminal(1)],
            prob: (1.0 - stop) / k as f64,
        });
    }
    productions.push(Production { lhs: 1, rhs: vec![], prob: stop });
    let static_map = (k > 1).then(|| (0..k).map(|x| (x + 1) % k).collect());
    Ok(Grammar {
        name: "identity_rule".into(),
        kind: LanguageKind::IdentityRule,
        alphabet,
        nonterminals: vec!["S".into(), "A".into()],
        productions,
        max_length: params.max_length.unwrap_or(20),
        min_length: 2,
        max_depth: params.max_depth,
        static_map,
        homomorphism: None,
        middle_marker: None,
    })
}

/// Alphabet order of the Dyck-2 grammar.
pub const DYCK_SYMBOLS: [&str; 4] = ["(", ")", "[", "]"];

fn dyck2(params: &GrammarParams) -> Result<Grammar> {
    let (lp, rp, lb, rb) = (0, 1, 2, 3);
    let s = Symbol::Nonterminal(0);
    let productions = vec![
        Production { lhs: 0, rhs: vec![Symbol::Terminal(lb), s, Symbol::Terminal(rb)], prob: 0.25 },
        Production { lhs: 0, rhs: vec![Symbol::Terminal(lp), s, Symbol::Terminal(rp)], prob: 0.25 },
        Production { lhs: 0, rhs: vec![s, s], prob: 0.25 },
        Production { lhs: 0, rhs: vec![], prob: 0.25 },
    ];
    Ok(Grammar {
        name: "dyck2".into(),
        kind: LanguageKind::Dyck2,
        alphabet: DYCK_SYMBOLS.iter().map(|s| s.to_string()).collect(),
        nonterminals: vec!["S".into()],
        productions,
        max_length: params.max_length.unwrap_or(20),
        min_length: 2,
        max_depth: Some(params.max_depth.unwrap_or(4)),
        // ( <-> [ and ) <-> ]
        static_map: Some(vec![lb, rb, lp, rp]),
        homomorphism: None,
        middle_marker: None,
    })
}

/// Marker symbol separating the palindrome halves when enabled.
pub const PALINDROME_MARKER: &str = "|";

fn palindrome(params: &GrammarParams) -> Result<Grammar> {
    let k = params.symbols.unwrap_or(10);
    if k < 2 {
        return Err(Error::InvalidGrammar("palindrome needs at least 2 symbols".into()));
    }
    let stop = check_stop(params.stop_prob.unwrap_or(0.2))?;
    let mut alphabet = letters(k, false)?;
    alphabet.extend(letters(k, true)?);
    let marker = params.middle_marker.then(|| {
        alphabet.push(PALINDROME_MARKER.to_string());
        2 * k
    });
    let mut productions = Vec::new();
    // S -> x S h(x)
    for x in 0..k {
        productions.push(Production {
            lhs: 0,
            rhs: vec![Symbol::Terminal(x), Symbol::Nonterminal(0), Symbol::Terminal(k + x)],
            prob: (1.0 - stop) / k as f64,
        });
    }
    productions.push(Production {
        lhs: 0,
        rhs: marker.map(|m| vec![Symbol::Terminal(m)]).unwrap_or_default(),
        prob: stop,
    });

    let mut homomorphism = vec![None; alphabet.len()];
    for (x, slot) in homomorphism.iter_mut().take(k).enumerate() {
        *slot = Some(k + x);
    }

    // Random derangement of the base symbols, lifted through h.
    let mut rng = rng::stream(params.map_seed, rng::label_id("palindrome-static-map"));
    let sigma = loop {
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            break perm;
        }
    };
    let mut static_map: Vec<usize> = (0..alphabet.len()).collect();
    for x in 0..k {
        static_map[x] = sigma[x];
        static_map[k + x] = k + sigma[x];
    }

    Ok(Grammar {
        name: "palindrome".into(),
        kind: LanguageKind::Palindrome,
        alphabet,
        nonterminals: vec!["S".into()],
        productions,
        max_length: params.max_length.unwrap_or(18),
        min_length: 2,
        max_depth: params.max_depth,
        static_map: Some(static_map),
        homomorphism: Some(homomorphism),
        middle_marker: marker,
    })
}

impl Grammar {
    pub fn validate(&self) -> Result<()> {
        if self.max_length < 2 {
            return Err(Error::InvalidGrammar(format!(
                "max_length {} must be at least 2",
                self.max_length
            )));
        }
        if self.max_length > 32 {
            return Err(Error::InvalidGrammar(format!(
                "max_length {} exceeds the 32-position coalition limit",
                self.max_length
            )));
        }
        if self.alphabet.is_empty() {
            return Err(Error::InvalidGrammar("empty alphabet".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidGrammar("max_depth must be positive".into()));
        }
        let mut mass = vec![0.0; self.nonterminals.len()];
        let mut seen = vec![false; self.nonterminals.len()];
        for p in &self.productions {
            if p.lhs >= self.nonterminals.len() {
                return Err(Error::InvalidGrammar(format!("production lhs {} undefined", p.lhs)));
            }
            if !(0.0..=1.0).contains(&p.prob) {
                return Err(Error::InvalidGrammar(format!(
                    "probability {} of a {} production outside [0, 1]",
                    p.prob, self.nonterminals[p.lhs]
                )));
            }
            for s in &p.rhs {
                match *s {
                    Symbol::Terminal(t) if t >= self.alphabet.len() => {
                        return Err(Error::InvalidGrammar(format!("terminal {t} undefined")))
                    }
                    Symbol::Nonterminal(n) if n >= self.nonterminals.len() => {
                        return Err(Error::InvalidGrammar(format!("nonterminal {n} undefined")))
                    }
                    _ => {}
                }
            }
            mass[p.lhs] += p.prob;
            seen[p.lhs] = true;
        }
        for (i, (&m, &s)) in mass.iter().zip(&seen).enumerate() {
            if !s {
                return Err(Error::InvalidGrammar(format!(
                    "nonterminal {} has no productions",
                    self.nonterminals[i]
                )));
            }
            if (m - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(Error::InvalidGrammar(format!(
                    "probabilities of {} sum to {m}, not 1",
                    self.nonterminals[i]
                )));
            }
        }
        if let Some(map) = &self.static_map {
            let mut hit = vec![false; self.alphabet.len()];
            if map.len() != self.alphabet.len() {
                return Err(Error::InvalidGrammar("static map does not cover the alphabet".into()));
            }
            for &t in map {
                if t >= hit.len() || hit[t] {
                    return Err(Error::InvalidGrammar("static map is not a bijection".into()));
                }
                hit[t] = true;
            }
        }
        Ok(())
    }

    pub fn symbol_index(&self, symbol: &str) -> Option<usize> {
        self.alphabet.iter().position(|s| s == symbol)
    }

    /// Parses whitespace-separated symbols.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|s| {
                self.symbol_index(s)
                    .ok_or_else(|| Error::Invalid(format!("symbol `{s}` not in alphabet of {}", self.name)))
            })
            .collect()
    }

    /// Parses a string of single-character symbols, e.g. `"([])"`.
    pub fn tokenize_chars(&self, text: &str) -> Result<Vec<usize>> {
        let spaced: Vec<String> = text.chars().map(|c| c.to_string()).collect();
        self.tokenize(&spaced.join(" "))
    }

    pub fn render(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .map(|&t| self.alphabet[t].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn render_compact(&self, tokens: &[usize]) -> String {
        tokens.iter().map(|&t| self.alphabet[t].as_str()).collect()
    }

    /// Applies the static map `T` token-wise.
    pub fn map_tokens(&self, tokens: &[usize]) -> Result<Vec<usize>> {
        let map = self.static_map.as_ref().ok_or_else(|| {
            Error::Baseline(format!("grammar {} defines no static map", self.name))
        })?;
        Ok(tokens.iter().map(|&t| map[t]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyck2_defaults() {
        let g = build_grammar("dyck2", &GrammarParams::default()).unwrap();
        assert_eq!(g.productions.len(), 4);
        assert!(g.productions.iter().all(|p| p.prob == 0.25));
        assert_eq!(g.max_length, 20);
        assert_eq!(g.max_depth, Some(4));
        let t = g.static_map.as_ref().unwrap();
        let open = g.symbol_index("(").unwrap();
        assert_eq!(g.alphabet[t[open]], "[");
        assert_eq!(g.alphabet[t[g.symbol_index(")").unwrap()]], "]");
    }

    #[test]
    fn identity_rule_defaults() {
        let g = build_grammar("identity_rule", &GrammarParams::default()).unwrap();
        assert_eq!(g.alphabet.len(), 3);
        assert_eq!(g.max_length, 20);
    }

    #[test]
    fn palindrome_defaults() {
        let g = build_grammar("palindrome", &GrammarParams::default()).unwrap();
        assert_eq!(g.alphabet.len(), 20);
        assert_eq!(g.max_length, 18);
        let h = g.homomorphism.as_ref().unwrap();
        let images: std::collections::BTreeSet<usize> = h.iter().flatten().copied().collect();
        assert_eq!(images.len(), 10);
        assert!(images.iter().all(|&i| i >= 10));
        // T preserves grammaticality: maps first-half to first-half without fixed points.
        let t = g.static_map.as_ref().unwrap();
        for x in 0..10 {
            assert!(t[x] < 10 && t[x] != x);
            assert_eq!(t[10 + x], 10 + t[x]);
        }
    }

    #[test]
    fn unnormalised_custom_table_is_rejected() {
        let params = GrammarParams {
            table: Some("S -> a S : 0.5\nS -> b : 0.4\n".into()),
            ..Default::default()
        };
        let err = build_grammar("custom", &params).unwrap_err();
        assert!(matches!(err, Error::InvalidGrammar(_)), "{err}");
    }

    #[test]
    fn unknown_name_and_short_length() {
        assert!(matches!(
            build_grammar("anbn", &GrammarParams::default()),
            Err(Error::UnknownGrammar(_))
        ));
        let params = GrammarParams { max_length: Some(1), ..Default::default() };
        assert!(build_grammar("dyck2", &params).is_err());
    }
}
