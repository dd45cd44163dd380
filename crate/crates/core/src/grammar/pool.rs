//! Language strings consistent with a partial input, for the observational
//! removal strategy.
//!
//! The built-in languages are sampled structurally (uniform over the distinct
//! strings of the right length that agree with the present features) without
//! materialising the language. Custom grammars fall back to an explicitly
//! enumerated pool.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;

use super::corpus::{format_item, parse_item};
use super::{CorpusItem, Grammar, Label, LanguageKind, Symbol};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub enum LanguagePool {
    Structural(Grammar),
    Enumerated { grammar: Grammar, strings: Vec<Vec<usize>> },
}

fn present(mask: u32, i: usize) -> bool {
    mask >> i & 1 == 1
}

impl LanguagePool {
    /// Structural pool for built-ins; custom grammars are enumerated up to
    /// `enumeration_limit` sentential forms.
    pub fn for_grammar(g: &Grammar, enumeration_limit: usize) -> Result<Self> {
        match g.kind {
            LanguageKind::Custom => {
                let strings = enumerate_language(g, enumeration_limit)?;
                Ok(LanguagePool::Enumerated { grammar: g.clone(), strings })
            }
            _ => Ok(LanguagePool::Structural(g.clone())),
        }
    }

    pub fn grammar(&self) -> &Grammar {
        match self {
            LanguagePool::Structural(g) => g,
            LanguagePool::Enumerated { grammar, .. } => grammar,
        }
    }

    fn length_ok(&self, n: usize) -> bool {
        let g = self.grammar();
        n >= g.min_length && n <= g.max_length
    }

    /// Number of language strings of length `x.len()` agreeing with `x` on the
    /// positions in `mask`. Saturates at `u128::MAX`.
    pub fn count_matches(&self, x: &[usize], mask: u32) -> u128 {
        if !self.length_ok(x.len()) {
            return 0;
        }
        match self {
            LanguagePool::Enumerated { strings, .. } => {
                strings.iter().filter(|s| matches(s, x, mask)).count() as u128
            }
            LanguagePool::Structural(g) => match g.kind {
                LanguageKind::IdentityRule => identity_count(g, x, mask),
                LanguageKind::Dyck2 => DyckTable::new(g, x, mask).total(),
                LanguageKind::Palindrome => palindrome_slots(g, x, mask)
                    .map_or(0, |slots| {
                        slots.iter().fold(1u128, |acc, s| acc.saturating_mul(s.len() as u128))
                    }),
                LanguageKind::Custom => unreachable!("custom grammars are enumerated"),
            },
        }
    }

    /// Uniform draw among the matching strings; `None` when there are none.
    pub fn sample_match(&self, x: &[usize], mask: u32, rng: &mut Rng) -> Option<Vec<usize>> {
        if !self.length_ok(x.len()) {
            return None;
        }
        match self {
            LanguagePool::Enumerated { strings, .. } => {
                let hits: Vec<&Vec<usize>> = strings.iter().filter(|s| matches(s, x, mask)).collect();
                (!hits.is_empty()).then(|| hits[rng.gen_range(0..hits.len())].clone())
            }
            LanguagePool::Structural(g) => match g.kind {
                LanguageKind::IdentityRule => identity_sample(g, x, mask, rng),
                LanguageKind::Dyck2 => DyckTable::new(g, x, mask).sample(rng),
                LanguageKind::Palindrome => {
                    let slots = palindrome_slots(g, x, mask)?;
                    let n = x.len();
                    let mut out = x.to_vec();
                    if let Some(m) = g.middle_marker {
                        out[n / 2] = m;
                    }
                    for (i, choices) in slots.iter().enumerate() {
                        let b = choices[rng.gen_range(0..choices.len())];
                        out[i] = b;
                        out[n - 1 - i] = g.homomorphism.as_ref()?[b]?;
                    }
                    Some(out)
                }
                LanguageKind::Custom => unreachable!("custom grammars are enumerated"),
            },
        }
    }

    /// Every matching string, if there are at most `limit` of them.
    pub fn all_matches(&self, x: &[usize], mask: u32, limit: usize) -> Option<Vec<Vec<usize>>> {
        let count = self.count_matches(x, mask);
        if count > limit as u128 {
            return None;
        }
        if count == 0 {
            return Some(Vec::new());
        }
        match self {
            LanguagePool::Enumerated { strings, .. } => {
                Some(strings.iter().filter(|s| matches(s, x, mask)).cloned().collect())
            }
            LanguagePool::Structural(g) => {
                let n = x.len();
                let options: Vec<Vec<usize>> = (0..n)
                    .map(|i| if present(mask, i) { vec![x[i]] } else { (0..g.alphabet.len()).collect() })
                    .collect();
                match g.kind {
                    LanguageKind::Palindrome => {
                        let slots = palindrome_slots(g, x, mask)?;
                        let mut out = Vec::with_capacity(count as usize);
                        let mut cur = Vec::with_capacity(slots.len());
                        product(&slots, &mut cur, &mut |half| {
                            let mut s = x.to_vec();
                            if let Some(m) = g.middle_marker {
                                s[n / 2] = m;
                            }
                            for (i, &b) in half.iter().enumerate() {
                                s[i] = b;
                                s[n - 1 - i] = g.homomorphism.as_ref().and_then(|h| h[b]).expect("base symbol");
                            }
                            out.push(s);
                        }, &|_| true);
                        Some(out)
                    }
                    // Small match sets: walk the constrained product, pruned by prefix viability.
                    LanguageKind::Dyck2 => {
                        let table = DyckTable::new(g, x, mask);
                        let mut out = Vec::with_capacity(count as usize);
                        table.enumerate(&mut Vec::new(), 0, 0, &mut out);
                        Some(out)
                    }
                    _ => {
                        let mut out = Vec::new();
                        let mut cur = Vec::with_capacity(n);
                        product(&options, &mut cur, &mut |s| {
                            if g.accepts(s) {
                                out.push(s.to_vec());
                            }
                        }, &|prefix| prefix_viable(g, prefix, n));
                        Some(out)
                    }
                }
            }
        }
    }
}

fn matches(s: &[usize], x: &[usize], mask: u32) -> bool {
    s.len() == x.len() && (0..x.len()).all(|i| !present(mask, i) || s[i] == x[i])
}

fn product(
    options: &[Vec<usize>],
    cur: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
    viable: &dyn Fn(&[usize]) -> bool,
) {
    if cur.len() == options.len() {
        visit(cur);
        return;
    }
    for &t in &options[cur.len()] {
        cur.push(t);
        if viable(cur) {
            product(options, cur, visit, viable);
        }
        cur.pop();
    }
}

fn prefix_viable(g: &Grammar, prefix: &[usize], n: usize) -> bool {
    match g.kind {
        LanguageKind::IdentityRule => prefix.len() < 2 || prefix[0] == prefix[1],
        LanguageKind::Palindrome => {
            let i = prefix.len() - 1;
            let mirror = n - 1 - i;
            if mirror < i {
                g.homomorphism.as_ref().and_then(|h| h[prefix[mirror]]) == Some(prefix[i])
            } else {
                true
            }
        }
        _ => true,
    }
}

fn identity_count(g: &Grammar, x: &[usize], mask: u32) -> u128 {
    let k = g.alphabet.len() as u128;
    let n = x.len();
    let head = match (present(mask, 0), present(mask, 1)) {
        (true, true) if x[0] != x[1] => return 0,
        (false, false) => k,
        _ => 1,
    };
    (2..n)
        .filter(|&i| !present(mask, i))
        .fold(head, |acc, _| acc.saturating_mul(k))
}

fn identity_sample(g: &Grammar, x: &[usize], mask: u32, rng: &mut Rng) -> Option<Vec<usize>> {
    let k = g.alphabet.len();
    let mut out = x.to_vec();
    let head = match (present(mask, 0), present(mask, 1)) {
        (true, true) if x[0] != x[1] => return None,
        (true, _) => x[0],
        (false, true) => x[1],
        (false, false) => rng.gen_range(0..k),
    };
    out[0] = head;
    out[1] = head;
    for (i, slot) in out.iter_mut().enumerate().skip(2) {
        if !present(mask, i) {
            *slot = rng.gen_range(0..k);
        }
    }
    Some(out)
}

/// Allowed first-half base symbols per mirror pair, or `None` if the present
/// features already contradict every palindrome.
fn palindrome_slots(g: &Grammar, x: &[usize], mask: u32) -> Option<Vec<Vec<usize>>> {
    let n = x.len();
    let h = g.homomorphism.as_ref()?;
    match g.middle_marker {
        Some(m) => {
            if n % 2 == 0 || (present(mask, n / 2) && x[n / 2] != m) {
                return None;
            }
        }
        None if n % 2 == 1 => return None,
        None => {}
    }
    let base: Vec<usize> = (0..h.len()).filter(|&s| h[s].is_some()).collect();
    let mut slots = Vec::with_capacity(n / 2);
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let allowed: Vec<usize> = base
            .iter()
            .copied()
            .filter(|&b| (!present(mask, i) || x[i] == b) && (!present(mask, j) || h[b] == Some(x[j])))
            .collect();
        if allowed.is_empty() {
            return None;
        }
        slots.push(allowed);
    }
    Some(slots)
}

/// Completion counts for bounded-depth Dyck-2 under positional constraints.
/// Stack states are `(depth, bits)` packed as `(1 << depth) - 1 + bits`.
struct DyckTable<'a> {
    x: &'a [usize],
    mask: u32,
    depth_cap: usize,
    /// `counts[pos][state]`: completions from `pos` in `state` to an empty stack at the end.
    counts: Vec<Vec<u128>>,
}

impl<'a> DyckTable<'a> {
    fn new(g: &Grammar, x: &'a [usize], mask: u32) -> Self {
        let n = x.len();
        let depth_cap = g.max_depth.unwrap_or(n / 2).min(n / 2).min(30);
        let states = (1usize << (depth_cap + 1)) - 1;
        let mut counts = vec![vec![0u128; states]; n + 1];
        counts[n][0] = 1;
        for pos in (0..n).rev() {
            for state in 0..states {
                let mut total = 0u128;
                for t in Self::options(x, mask, pos) {
                    if let Some(next) = Self::step(state, t, depth_cap) {
                        total = total.saturating_add(counts[pos + 1][next]);
                    }
                }
                counts[pos][state] = total;
            }
        }
        Self { x, mask, depth_cap, counts }
    }

    fn options(x: &[usize], mask: u32, pos: usize) -> std::ops::Range<usize> {
        if present(mask, pos) {
            x[pos]..x[pos] + 1
        } else {
            0..4
        }
    }

    fn unpack(state: usize) -> (usize, usize) {
        let depth = usize::BITS as usize - 1 - (state + 1).leading_zeros() as usize;
        (depth, state + 1 - (1 << depth))
    }

    fn pack(depth: usize, bits: usize) -> usize {
        (1 << depth) - 1 + bits
    }

    fn step(state: usize, token: usize, cap: usize) -> Option<usize> {
        let (depth, bits) = Self::unpack(state);
        let kind = token / 2;
        if token > 3 {
            return None;
        }
        if token % 2 == 0 {
            (depth < cap).then(|| Self::pack(depth + 1, bits | kind << depth))
        } else {
            if depth == 0 || (bits >> (depth - 1)) & 1 != kind {
                return None;
            }
            Some(Self::pack(depth - 1, bits & ((1 << (depth - 1)) - 1)))
        }
    }

    fn total(&self) -> u128 {
        self.counts[0][0]
    }

    fn sample(&self, rng: &mut Rng) -> Option<Vec<usize>> {
        if self.total() == 0 {
            return None;
        }
        let n = self.x.len();
        let mut out = Vec::with_capacity(n);
        let mut state = 0;
        for pos in 0..n {
            let here = self.counts[pos][state];
            let mut r = rng.gen_range(0..here);
            let mut chosen = None;
            for t in Self::options(self.x, self.mask, pos) {
                if let Some(next) = Self::step(state, t, self.depth_cap) {
                    let c = self.counts[pos + 1][next];
                    if r < c {
                        chosen = Some((t, next));
                        break;
                    }
                    r -= c;
                }
            }
            let (t, next) = chosen?;
            out.push(t);
            state = next;
        }
        Some(out)
    }

    fn enumerate(&self, cur: &mut Vec<usize>, pos: usize, state: usize, out: &mut Vec<Vec<usize>>) {
        if pos == self.x.len() {
            out.push(cur.clone());
            return;
        }
        for t in Self::options(self.x, self.mask, pos) {
            if let Some(next) = Self::step(state, t, self.depth_cap) {
                if self.counts[pos + 1][next] > 0 {
                    cur.push(t);
                    self.enumerate(cur, pos + 1, next, out);
                    cur.pop();
                }
            }
        }
    }
}

/// The complete language up to `max_length`, by breadth-first leftmost
/// derivation honouring the depth cap. Fails once more than `limit`
/// sentential forms have been visited.
pub fn enumerate_language(g: &Grammar, limit: usize) -> Result<Vec<Vec<usize>>> {
    type Form = Vec<(Symbol, usize)>;
    let max_nonterminals = 2 * g.max_length + 2;
    let mut seen: HashSet<Form> = HashSet::new();
    let mut queue: VecDeque<Form> = VecDeque::new();
    let mut strings: HashSet<Vec<usize>> = HashSet::new();
    let start = vec![(Symbol::Nonterminal(0), 0)];
    seen.insert(start.clone());
    queue.push_back(start);

    while let Some(form) = queue.pop_front() {
        let Some(pos) = form.iter().position(|(s, _)| matches!(s, Symbol::Nonterminal(_))) else {
            let s: Vec<usize> = form
                .iter()
                .map(|(s, _)| match s {
                    Symbol::Terminal(t) => *t,
                    Symbol::Nonterminal(_) => unreachable!(),
                })
                .collect();
            if s.len() >= g.min_length {
                strings.insert(s);
            }
            continue;
        };
        let (Symbol::Nonterminal(nt), depth) = form[pos] else { unreachable!() };
        for prod in g.productions.iter().filter(|p| p.lhs == nt && p.prob > 0.0) {
            let child_depth = if prod.emits_terminals() {
                if g.max_depth.is_some_and(|cap| depth + 1 > cap) {
                    continue;
                }
                depth + 1
            } else {
                depth
            };
            let mut next: Form = Vec::with_capacity(form.len() + prod.rhs.len());
            next.extend_from_slice(&form[..pos]);
            next.extend(prod.rhs.iter().map(|s| (*s, child_depth)));
            next.extend_from_slice(&form[pos + 1..]);
            let terminals = next.iter().filter(|(s, _)| matches!(s, Symbol::Terminal(_))).count();
            if terminals > g.max_length || next.len() - terminals > max_nonterminals {
                continue;
            }
            if seen.insert(next.clone()) {
                if seen.len() > limit {
                    return Err(Error::Invalid(format!(
                        "language enumeration exceeded {limit} sentential forms"
                    )));
                }
                queue.push_back(next);
            }
        }
    }
    let mut out: Vec<Vec<usize>> = strings.into_iter().collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(out)
}

/// Pool cache in the corpus line format.
pub fn write_pool(path: &Path, g: &Grammar, strings: &[Vec<usize>]) -> Result<()> {
    let mut out = String::new();
    for s in strings {
        let item = CorpusItem { tokens: s.clone(), label: Label::WellFormed, gold_pairs: g.gold_pairs(s)? };
        let _ = writeln!(out, "{}", format_item(g, &item));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_pool(path: &Path, g: &Grammar) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path)?;
    let origin = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| parse_item(g, l, &origin, i + 1).map(|it| it.tokens))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{build_grammar, GrammarParams};
    use crate::rng;
    use std::collections::HashMap;

    fn small(name: &str, max_length: usize, symbols: Option<usize>) -> Grammar {
        build_grammar(name, &GrammarParams { max_length: Some(max_length), symbols, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn dyck_length_two_strings() {
        let g = small("dyck2", 2, None);
        let all = enumerate_language(&g, 100_000).unwrap();
        let rendered: Vec<String> = all.iter().map(|s| g.render_compact(s)).collect();
        assert_eq!(rendered, vec!["()", "[]"]);
        let pool = LanguagePool::for_grammar(&g, 1000).unwrap();
        let x = g.tokenize_chars("()").unwrap();
        assert_eq!(pool.count_matches(&x, 0b01), 1);
        for s in 0..10 {
            let m = pool.sample_match(&x, 0b01, &mut rng::stream(s, 0)).unwrap();
            assert_eq!(g.render_compact(&m), "()");
        }
    }

    #[test]
    fn identity_filler_repeats_first_symbol() {
        let g = small("identity_rule", 5, None);
        let x = g.tokenize_chars("aabca").unwrap();
        let all = enumerate_language(&g, 1_000_000).unwrap();
        let hits: Vec<_> = all.iter().filter(|s| matches(s, &x, 0b00001)).collect();
        assert!(hits.iter().all(|s| s[1] == x[0]));
        let pool = LanguagePool::for_grammar(&g, 0).unwrap();
        assert_eq!(pool.count_matches(&x, 0b00001), hits.len() as u128);
        for s in 0..20 {
            assert_eq!(pool.sample_match(&x, 0b00001, &mut rng::stream(s, 1)).unwrap()[1], x[0]);
        }
    }

    /// The structural counts agree with filtering the enumerated language, for
    /// every mask over a few inputs.
    #[test]
    fn structural_counts_match_enumeration() {
        for (name, len, sym) in [("dyck2", 8, None), ("identity_rule", 5, None), ("palindrome", 6, Some(3))] {
            let g = small(name, len, sym);
            let all = enumerate_language(&g, 5_000_000).unwrap();
            let pool = LanguagePool::for_grammar(&g, 0).unwrap();
            let enumerated = LanguagePool::Enumerated { grammar: g.clone(), strings: all.clone() };
            for x in all.iter().filter(|s| s.len() == len).take(6) {
                for mask in 0..(1u32 << len) {
                    let c = pool.count_matches(x, mask);
                    assert_eq!(c, enumerated.count_matches(x, mask), "{name} mask {mask:b}");
                    if c <= 50 {
                        let mut a = pool.all_matches(x, mask, 50).unwrap();
                        let mut b = enumerated.all_matches(x, mask, 50).unwrap();
                        a.sort();
                        b.sort();
                        assert_eq!(a, b);
                    }
                }
            }
        }
    }

    #[test]
    fn dyck_sampling_is_uniform() {
        let g = small("dyck2", 6, None);
        let pool = LanguagePool::for_grammar(&g, 0).unwrap();
        let x = g.tokenize_chars("(()[])").unwrap();
        let mask = 0b000001;
        let count = pool.count_matches(&x, mask) as usize;
        let mut freq: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut r = rng::stream(3, 3);
        let draws = 20_000;
        for _ in 0..draws {
            let s = pool.sample_match(&x, mask, &mut r).unwrap();
            assert!(g.accepts(&s) && s[0] == x[0]);
            *freq.entry(s).or_default() += 1;
        }
        assert_eq!(freq.len(), count);
        let expect = draws as f64 / count as f64;
        for &f in freq.values() {
            assert!((f as f64 - expect).abs() < 5.0 * expect.sqrt(), "{f} vs {expect}");
        }
    }

    #[test]
    fn corrupted_input_can_have_empty_support() {
        let g = small("identity_rule", 4, None);
        let pool = LanguagePool::for_grammar(&g, 0).unwrap();
        let x = g.tokenize_chars("abcc").unwrap();
        assert_eq!(pool.count_matches(&x, 0b0011), 0);
        assert!(pool.sample_match(&x, 0b0011, &mut rng::stream(0, 0)).is_none());
    }

    #[test]
    fn pool_file_round_trip() {
        let g = small("dyck2", 6, None);
        let all = enumerate_language(&g, 1_000_000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.tsv");
        write_pool(&path, &g, &all).unwrap();
        assert_eq!(read_pool(&path, &g).unwrap(), all);
    }

    #[test]
    fn enumeration_limit_is_enforced() {
        let g = small("dyck2", 12, None);
        assert!(enumerate_language(&g, 100).is_err());
    }
}
