use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use super::{Grammar, Pair};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Corrupted,
    WellFormed,
}

impl Label {
    /// Class index: 1 is well-formed.
    pub fn class(self) -> usize {
        match self {
            Label::Corrupted => 0,
            Label::WellFormed => 1,
        }
    }

    pub fn from_class(class: usize) -> Option<Self> {
        match class {
            0 => Some(Label::Corrupted),
            1 => Some(Label::WellFormed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusItem {
    pub tokens: Vec<usize>,
    pub label: Label,
    /// Sorted, each pair with `i < j`.
    pub gold_pairs: Vec<Pair>,
}

impl CorpusItem {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    /// Indices into [`Corpus::items`] order (positives, then negatives).
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Well-formed strings `D⁺` and their corruptions `D⁻`. Negative `k` is the
/// corruption of positive `k`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub positive: Vec<CorpusItem>,
    pub negative: Vec<CorpusItem>,
    pub split: Option<Split>,
    pub seed: u64,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn item(&self, index: usize) -> &CorpusItem {
        if index < self.positive.len() {
            &self.positive[index]
        } else {
            &self.negative[index - self.positive.len()]
        }
    }

    pub fn items(&self) -> impl Iterator<Item = &CorpusItem> {
        self.positive.iter().chain(&self.negative)
    }

    fn split_ref(&self) -> Result<&Split> {
        self.split
            .as_ref()
            .ok_or_else(|| Error::Invalid("corpus has no train/test split".into()))
    }

    pub fn train_items(&self) -> Result<Vec<&CorpusItem>> {
        Ok(self.split_ref()?.train.iter().map(|&i| self.item(i)).collect())
    }

    pub fn test_items(&self) -> Result<Vec<&CorpusItem>> {
        Ok(self.split_ref()?.test.iter().map(|&i| self.item(i)).collect())
    }
}

/// Label-stratified random partition; `ratio` is the training fraction.
pub fn make_split(corpus: &Corpus, ratio: f64, seed: u64) -> Result<Corpus> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    let mut rng = rng::stream(seed, rng::label_id("split"));
    let p = corpus.positive.len();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for range in [0..p, p..corpus.len()] {
        let mut idx: Vec<usize> = range.collect();
        idx.shuffle(&mut rng);
        let cut = (ratio * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let mut out = corpus.clone();
    out.split = Some(Split { train, test });
    Ok(out)
}

fn format_pairs(pairs: &[Pair]) -> String {
    pairs
        .iter()
        .map(|(i, j)| format!("{i}-{j}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn format_indices(idx: &[usize]) -> String {
    idx.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub(crate) fn format_item(g: &Grammar, item: &CorpusItem) -> String {
    format!(
        "{}\t{}\t{}",
        item.label.class(),
        g.render(&item.tokens),
        format_pairs(&item.gold_pairs)
    )
}

pub(crate) fn parse_item(g: &Grammar, line: &str, origin: &str, lineno: usize) -> Result<CorpusItem> {
    let err = |msg: String| Error::parse(origin, lineno, msg);
    let mut cols = line.split('\t');
    let (Some(label), Some(tokens), Some(pairs), None) =
        (cols.next(), cols.next(), cols.next(), cols.next())
    else {
        return Err(err("expected three tab-separated columns".into()));
    };
    let label = label
        .parse::<usize>()
        .ok()
        .and_then(Label::from_class)
        .ok_or_else(|| err(format!("bad label `{label}`")))?;
    let tokens = g.tokenize(tokens).map_err(|e| err(e.to_string()))?;
    let mut gold_pairs = Vec::new();
    for p in pairs.split(',').filter(|s| !s.is_empty()) {
        let (i, j) = p
            .split_once('-')
            .and_then(|(i, j)| Some((i.parse().ok()?, j.parse().ok()?)))
            .ok_or_else(|| err(format!("bad pair `{p}`")))?;
        if i >= tokens.len() || j >= tokens.len() {
            return Err(err(format!("pair {i}-{j} out of range")));
        }
        gold_pairs.push((i, j));
    }
    Ok(CorpusItem { tokens, label, gold_pairs })
}

pub fn corpus_to_string(g: &Grammar, corpus: &Corpus) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "#seed\t{}", corpus.seed);
    if let Some(split) = &corpus.split {
        let _ = writeln!(out, "#train\t{}", format_indices(&split.train));
        let _ = writeln!(out, "#test\t{}", format_indices(&split.test));
    }
    for item in corpus.items() {
        out.push_str(&format_item(g, item));
        out.push('\n');
    }
    out
}

/// Writes `<label>\t<tokens>\t<pairs>` lines, positives first, with the seed
/// and split as `#` header lines.
pub fn write_corpus(path: &Path, g: &Grammar, corpus: &Corpus) -> Result<()> {
    std::fs::write(path, corpus_to_string(g, corpus))?;
    Ok(())
}

pub fn corpus_from_str(g: &Grammar, text: &str, origin: &str) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut train = None;
    let mut test = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let (key, value) = header.split_once('\t').unwrap_or((header, ""));
            let indices = || -> Result<Vec<usize>> {
                value
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| Error::parse(origin, lineno, format!("bad index `{s}`"))))
                    .collect()
            };
            match key {
                "seed" => {
                    corpus.seed = value
                        .parse()
                        .map_err(|_| Error::parse(origin, lineno, "bad seed"))?
                }
                "train" => train = Some(indices()?),
                "test" => test = Some(indices()?),
                _ => {}
            }
            continue;
        }
        let item = parse_item(g, line, origin, lineno)?;
        match item.label {
            Label::WellFormed => {
                if !corpus.negative.is_empty() {
                    return Err(Error::parse(origin, lineno, "positive item after negatives"));
                }
                corpus.positive.push(item)
            }
            Label::Corrupted => corpus.negative.push(item),
        }
    }
    corpus.split = match (train, test) {
        (Some(train), Some(test)) => {
            if train.iter().chain(&test).any(|&i| i >= corpus.len()) {
                return Err(Error::parse(origin, 0, "split index out of range"));
            }
            Some(Split { train, test })
        }
        (None, None) => None,
        _ => return Err(Error::parse(origin, 0, "split needs both #train and #test")),
    };
    Ok(corpus)
}

pub fn read_corpus(path: &Path, g: &Grammar) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    corpus_from_str(g, &text, &path.display().to_string())
}
