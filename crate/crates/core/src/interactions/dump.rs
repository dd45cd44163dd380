//! Plain-text matrix files: one `#` header line of `key=value` fields, then
//! `N` rows of `N` whitespace-separated decimals.

use std::fmt::Write as _;
use std::path::Path;

use super::{InteractionMatrix, Method};
use crate::error::{Error, Result};
use crate::removal::BaselineKind;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixHeader {
    pub method: Method,
    pub baseline: Option<BaselineKind>,
    pub seed: u64,
    pub n: usize,
    /// Extra provenance fields, written after the required ones.
    pub extra: Vec<(String, String)>,
}

impl MatrixHeader {
    pub fn for_matrix(m: &InteractionMatrix, seed: u64) -> Self {
        Self { method: m.method, baseline: m.baseline, seed, n: m.n, extra: Vec::new() }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn write_matrix(header: &MatrixHeader, m: &InteractionMatrix) -> Result<String> {
    if header.n != m.n {
        return Err(Error::Shape(format!("header says n={} for a {}×{} matrix", header.n, m.n, m.n)));
    }
    let mut out = format!(
        "# method={} baseline={} seed={} n={}",
        header.method.name(),
        header.baseline.map_or("none", BaselineKind::name),
        header.seed,
        header.n
    );
    for (k, v) in &header.extra {
        if k.contains(['=', ' ']) || v.contains(char::is_whitespace) {
            return Err(Error::Invalid(format!("header field `{k}={v}` contains a separator")));
        }
        write!(out, " {k}={v}").expect("string write");
    }
    out.push('\n');
    for i in 0..m.n {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_matrix(text: &str, origin: &str) -> Result<(MatrixHeader, InteractionMatrix)> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::parse(origin, 1, "empty matrix file"))?;
    let fields = first
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(origin, 1, "missing `#` header line"))?;
    let (mut method, mut baseline, mut seed, mut n) = (None, None, None, None);
    let mut extra = Vec::new();
    for f in fields.split_whitespace() {
        let (k, v) = f.split_once('=').ok_or_else(|| Error::parse(origin, 1, format!("bad field `{f}`")))?;
        let bad = |e: Error| Error::parse(origin, 1, e.to_string());
        match k {
            "method" => method = Some(Method::from_name(v).map_err(bad)?),
            "baseline" if v == "none" => baseline = Some(None),
            "baseline" => baseline = Some(Some(BaselineKind::from_name(v).map_err(bad)?)),
            "seed" => seed = Some(v.parse::<u64>().map_err(|e| Error::parse(origin, 1, format!("seed: {e}")))?),
            "n" => n = Some(v.parse::<usize>().map_err(|e| Error::parse(origin, 1, format!("n: {e}")))?),
            _ => extra.push((k.to_string(), v.to_string())),
        }
    }
    let missing = |what: &str| Error::parse(origin, 1, format!("header lacks `{what}`"));
    let header = MatrixHeader {
        method: method.ok_or_else(|| missing("method"))?,
        baseline: baseline.ok_or_else(|| missing("baseline"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
        n: n.ok_or_else(|| missing("n"))?,
        extra,
    };
    let mut scores = Vec::with_capacity(header.n * header.n);
    let mut rows = 0;
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::parse(origin, ln + 1, format!("`{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != header.n {
            return Err(Error::parse(origin, ln + 1, format!("{} values, expected {}", row.len(), header.n)));
        }
        scores.extend(row);
        rows += 1;
    }
    if rows != header.n {
        return Err(Error::parse(origin, text.lines().count(), format!("{rows} rows, expected {}", header.n)));
    }
    let mut m = InteractionMatrix::new(header.n, scores, header.method, header.baseline)?;
    m.baseline = header.baseline;
    Ok((header, m))
}

pub fn read_matrix(path: &Path) -> Result<(MatrixHeader, InteractionMatrix)> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix(&text, &path.display().to_string())
}
