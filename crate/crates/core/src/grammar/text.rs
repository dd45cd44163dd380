//! Plain-text production tables.
//!
//! ```text
//! %name dyck2
//! %alphabet ( ) [ ]
//! %max_length 20
//! S -> ( S ) : 0.25
//! S -> : 0.25
//! ```
//!
//! Left-hand sides are nonterminals, every other symbol is a terminal, and the
//! first left-hand side is the start symbol unless `%nonterminals` says
//! otherwise. An empty right-hand side (or `ε`/`eps`) is the empty string.

use std::fmt::Write as _;

use super::{Grammar, LanguageKind, Production, Symbol};
use crate::error::{Error, Result};

pub fn write_grammar(g: &Grammar) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "%name {}", g.name);
    let _ = writeln!(out, "%language {}", g.kind.name());
    let _ = writeln!(out, "%alphabet {}", g.alphabet.join(" "));
    let _ = writeln!(out, "%nonterminals {}", g.nonterminals.join(" "));
    let _ = writeln!(out, "%max_length {}", g.max_length);
    let _ = writeln!(out, "%min_length {}", g.min_length);
    if let Some(d) = g.max_depth {
        let _ = writeln!(out, "%max_depth {d}");
    }
    if let Some(map) = &g.static_map {
        let images: Vec<&str> = map.iter().map(|&t| g.alphabet[t].as_str()).collect();
        let _ = writeln!(out, "%map {}", images.join(" "));
    }
    if let Some(h) = &g.homomorphism {
        for (x, img) in h.iter().enumerate() {
            if let Some(y) = img {
                let _ = writeln!(out, "%hom {} {}", g.alphabet[x], g.alphabet[*y]);
            }
        }
    }
    if let Some(m) = g.middle_marker {
        let _ = writeln!(out, "%marker {}", g.alphabet[m]);
    }
    for p in &g.productions {
        let rhs: Vec<&str> = p
            .rhs
            .iter()
            .map(|s| match *s {
                Symbol::Terminal(t) => g.alphabet[t].as_str(),
                Symbol::Nonterminal(n) => g.nonterminals[n].as_str(),
            })
            .collect();
        let sep = if rhs.is_empty() { "" } else { " " };
        let _ = writeln!(out, "{} ->{sep}{} : {}", g.nonterminals[p.lhs], rhs.join(" "), p.prob);
    }
    out
}

struct RawProduction {
    line: usize,
    lhs: String,
    rhs: Vec<String>,
    prob: f64,
}

pub fn parse_grammar(text: &str, origin: &str) -> Result<Grammar> {
    let err = |line: usize, msg: String| Error::parse(origin, line, msg);

    let mut name = "custom".to_string();
    let mut kind = LanguageKind::Custom;
    let mut alphabet: Option<Vec<String>> = None;
    let mut nonterminals: Option<Vec<String>> = None;
    let mut max_length = 20;
    let mut min_length = 2;
    let mut max_depth = None;
    let mut map_images: Option<(usize, Vec<String>)> = None;
    let mut hom: Vec<(usize, String, String)> = Vec::new();
    let mut marker: Option<(usize, String)> = None;
    let mut raw = Vec::new();

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(directive) = line.strip_prefix('%') {
            let mut parts = directive.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let args: Vec<String> = parts.map(str::to_string).collect();
            let single = || -> Result<&String> {
                match args.as_slice() {
                    [a] => Ok(a),
                    _ => Err(err(lineno, format!("%{key} takes exactly one argument"))),
                }
            };
            let number = || -> Result<usize> {
                single()?
                    .parse()
                    .map_err(|_| err(lineno, format!("%{key} expects an integer")))
            };
            match key {
                "name" => name = single()?.clone(),
                "language" => {
                    kind = LanguageKind::from_name(single()?).map_err(|e| err(lineno, e.to_string()))?
                }
                "alphabet" => alphabet = Some(args.clone()),
                "nonterminals" => nonterminals = Some(args.clone()),
                "max_length" => max_length = number()?,
                "min_length" => min_length = number()?,
                "max_depth" => max_depth = Some(number()?),
                "map" => map_images = Some((lineno, args.clone())),
                "hom" => match args.as_slice() {
                    [a, b] => hom.push((lineno, a.clone(), b.clone())),
                    _ => return Err(err(lineno, "%hom takes two symbols".into())),
                },
                "marker" => marker = Some((lineno, single()?.clone())),
                other => return Err(err(lineno, format!("unknown directive %{other}"))),
            }
            continue;
        }

        let (lhs, rest) = line
            .split_once("->")
            .ok_or_else(|| err(lineno, "expected `LHS -> RHS : prob`".into()))?;
        let (rhs, prob) = rest
            .rsplit_once(':')
            .ok_or_else(|| err(lineno, "missing `: prob`".into()))?;
        let lhs = lhs.trim();
        if lhs.is_empty() || lhs.contains(char::is_whitespace) {
            return Err(err(lineno, format!("bad left-hand side `{lhs}`")));
        }
        let prob: f64 = prob
            .trim()
            .parse()
            .map_err(|_| err(lineno, format!("bad probability `{}`", prob.trim())))?;
        let rhs: Vec<String> = rhs
            .split_whitespace()
            .filter(|s| *s != "ε" && *s != "eps")
            .map(str::to_string)
            .collect();
        raw.push(RawProduction { line: lineno, lhs: lhs.to_string(), rhs, prob });
    }

    if raw.is_empty() {
        return Err(err(0, "no productions".into()));
    }

    let nonterminals = nonterminals.unwrap_or_else(|| {
        let mut nts: Vec<String> = Vec::new();
        for p in &raw {
            if !nts.contains(&p.lhs) {
                nts.push(p.lhs.clone());
            }
        }
        nts
    });
    let alphabet = alphabet.unwrap_or_else(|| {
        let mut ts: Vec<String> = Vec::new();
        for p in &raw {
            for s in &p.rhs {
                if !nonterminals.contains(s) && !ts.contains(s) {
                    ts.push(s.clone());
                }
            }
        }
        ts
    });
    let terminal = |s: &str, line: usize| -> Result<usize> {
        alphabet
            .iter()
            .position(|a| a == s)
            .ok_or_else(|| err(line, format!("symbol `{s}` not in alphabet")))
    };

    let mut productions = Vec::with_capacity(raw.len());
    for p in &raw {
        let lhs = nonterminals
            .iter()
            .position(|n| *n == p.lhs)
            .ok_or_else(|| err(p.line, format!("`{}` missing from %nonterminals", p.lhs)))?;
        let rhs = p
            .rhs
            .iter()
            .map(|s| match nonterminals.iter().position(|n| n == s) {
                Some(n) => Ok(Symbol::Nonterminal(n)),
                None => terminal(s, p.line).map(Symbol::Terminal),
            })
            .collect::<Result<Vec<_>>>()?;
        productions.push(Production { lhs, rhs, prob: p.prob });
    }

    let static_map = match map_images {
        Some((line, images)) => {
            if images.len() != alphabet.len() {
                return Err(err(line, "%map must list one image per alphabet symbol".into()));
            }
            Some(images.iter().map(|s| terminal(s, line)).collect::<Result<Vec<_>>>()?)
        }
        None => None,
    };
    let homomorphism = if hom.is_empty() {
        None
    } else {
        let mut h = vec![None; alphabet.len()];
        for (line, a, b) in &hom {
            h[terminal(a, *line)?] = Some(terminal(b, *line)?);
        }
        Some(h)
    };
    let middle_marker = marker.map(|(line, m)| terminal(&m, line)).transpose()?;

    let grammar = Grammar {
        name,
        kind,
        alphabet,
        nonterminals,
        productions,
        max_length,
        min_length,
        max_depth,
        static_map,
        homomorphism,
        middle_marker,
    };
    grammar.validate()?;
    Ok(grammar)
}
