//! Stages over one output directory, each skipped when its content-hash key
//! matches the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use fidam_core::arr::{arr, evaluate_item, ArrReport, Cell, EvalSetup, Outcome, ReportMeta};
use fidam_core::classifier::{file_sha256, fit, load_checkpoint, save_checkpoint, Checkpoint, CorpusRef};
use fidam_core::grammar::{
    add_negatives, make_split, read_corpus, sample_corpus, write_corpus, write_pool, Corpus, CorpusItem, Grammar,
    Label, LanguagePool,
};
use fidam_core::interactions::{read_matrix, write_matrix, MatrixHeader, Method};
use fidam_core::removal::{Background, BaselineKind};
use fidam_core::{rng, Error};

use crate::config::{sha256_hex, EvalSplit, PipelineConfig};
use crate::events::EventLog;

pub const CORPUS_FILE: &str = "corpus.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_MD: &str = "report.md";

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    key: String,
    /// File name → sha256.
    outputs: BTreeMap<String, String>,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub out: PathBuf,
    grammar: Grammar,
    events: EventLog,
}

fn section<T: Serialize>(v: &T) -> String {
    toml::to_string(v).expect("section serialises")
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> anyhow::Result<Self> {
        config.validate()?;
        let grammar = config.grammar()?;
        let out = config.output.dir.clone();
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        std::fs::write(out.join("config.toml"), config.to_toml())?;
        let events = EventLog::open(&out.join("events.jsonl"))?;
        Ok(Self { config, out, grammar, events })
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn manifest(&self) -> anyhow::Result<Manifest> {
        let p = self.path("manifest.json");
        if !p.exists() {
            return Ok(Manifest::default());
        }
        let text = std::fs::read_to_string(&p)?;
        serde_json::from_str(&text).with_context(|| format!("reading {}", p.display()))
    }

    fn record(&self, stage: &str, key: &str, files: &[&str]) -> anyhow::Result<()> {
        let mut m = self.manifest()?;
        let mut outputs = BTreeMap::new();
        for f in files {
            outputs.insert(f.to_string(), file_sha256(&self.path(f))?);
        }
        m.stages.insert(stage.into(), StageRecord { key: key.into(), outputs });
        std::fs::write(self.path("manifest.json"), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }

    /// Whether `stage` already ran with `key` and its outputs are untouched.
    fn is_current(&self, stage: &str, key: &str) -> anyhow::Result<bool> {
        let m = self.manifest()?;
        let Some(r) = m.stages.get(stage) else { return Ok(false) };
        if r.key != key {
            return Ok(false);
        }
        for (f, sha) in &r.outputs {
            let p = self.path(f);
            if !p.exists() || &file_sha256(&p)? != sha {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn require(&self, file: &str, stage: &str, key: &str) -> anyhow::Result<PathBuf> {
        let p = self.path(file);
        if !p.exists() {
            bail!("missing {}: run `fidam {stage}` first", p.display());
        }
        if !self.is_current(stage, key)? {
            bail!("{} is out of date for this config: rerun `fidam {stage}`", p.display());
        }
        Ok(p)
    }

    fn generate_key(&self) -> String {
        let c = &self.config;
        let table = c.grammar_params().ok().and_then(|p| p.table).unwrap_or_default();
        sha256_hex(format!("generate\n{}\n{}\n{table}", c.seed, section(&c.language)).as_bytes())
    }

    fn train_key(&self, corpus_sha: &str) -> String {
        let c = &self.config;
        sha256_hex(format!("train\n{}\n{corpus_sha}\n{}\n{}", c.seed, section(&c.model), section(&c.training)).as_bytes())
    }

    fn attribute_key(&self, ckpt_sha: &str) -> String {
        let c = &self.config;
        sha256_hex(
            format!("attribute\n{}\n{ckpt_sha}\n{}\n{}", c.seed, section(&c.attribution), section(&c.methods)).as_bytes(),
        )
    }

    fn evaluate_key(&self, ckpt_sha: &str) -> String {
        let c = &self.config;
        sha256_hex(
            format!("evaluate\n{}\n{}\n{}", self.attribute_key(ckpt_sha), section(&c.evaluation), c.attribution.methods.len())
                .as_bytes(),
        )
    }

    /// Samples the corpus, adds corrupted items and splits.
    pub fn generate(&self) -> anyhow::Result<Corpus> {
        let key = self.generate_key();
        let path = self.path(CORPUS_FILE);
        if self.is_current("generate", &key)? {
            self.events.emit("generate", "cached", json!({}));
            return Ok(read_corpus(&path, &self.grammar)?);
        }
        let t = Instant::now();
        let l = &self.config.language;
        let seed = self.config.seed;
        let positives = sample_corpus(&self.grammar, l.corpus_size, seed)?;
        let corpus = make_split(&add_negatives(&positives, &self.grammar, seed)?, l.train_fraction, seed)?;
        write_corpus(&path, &self.grammar, &corpus)?;
        if let LanguagePool::Enumerated { strings, .. } = LanguagePool::for_grammar(&self.grammar, l.pool_limit)? {
            write_pool(&self.path("pool.txt"), &self.grammar, &strings)?;
        }
        self.record("generate", &key, &[CORPUS_FILE])?;
        self.events.emit(
            "generate",
            "done",
            json!({ "items": corpus.len(), "elapsed_ms": t.elapsed().as_millis() as u64 }),
        );
        Ok(corpus)
    }

    fn corpus(&self) -> anyhow::Result<(Corpus, String)> {
        let p = self.require(CORPUS_FILE, "generate", &self.generate_key())?;
        Ok((read_corpus(&p, &self.grammar)?, file_sha256(&p)?))
    }

    /// Trains to perfection or fails with a non-convergence error. The last
    /// attempt is saved either way so it can be inspected.
    pub fn train(&self) -> anyhow::Result<Checkpoint> {
        let (corpus, corpus_sha) = self.corpus()?;
        let key = self.train_key(&corpus_sha);
        let path = self.path(CHECKPOINT_FILE);
        let ck = if self.is_current("train", &key)? {
            self.events.emit("train", "cached", json!({}));
            load_checkpoint(&path, Some(&self.grammar))?
        } else {
            let t = Instant::now();
            let mcfg = self.config.model_config(&self.grammar);
            let mut ck = fit(&mcfg, &corpus, self.config.seed, &self.config.training)?;
            for (k, a) in ck.training.attempts.iter().enumerate() {
                self.events.emit(
                    "train",
                    "attempt",
                    json!({ "attempt": k, "seed": a.seed, "epochs": a.epochs,
                            "train_accuracy": a.train_accuracy, "test_accuracy": a.test_accuracy }),
                );
            }
            ck.corpus = Some(CorpusRef { path: CORPUS_FILE.into(), sha256: corpus_sha });
            save_checkpoint(&path, &ck)?;
            self.record("train", &key, &[CHECKPOINT_FILE])?;
            self.events.emit(
                "train",
                "done",
                json!({ "converged": ck.is_converged(), "elapsed_ms": t.elapsed().as_millis() as u64 }),
            );
            ck
        };
        if !ck.is_converged() {
            self.events.emit("train", "non_convergence", json!({ "attempts": ck.training.attempts.len() }));
            let best = ck.training.attempts.iter().max_by(|a, b| {
                (a.train_accuracy + a.test_accuracy).total_cmp(&(b.train_accuracy + b.test_accuracy))
            });
            return Err(Error::NonConvergence {
                attempts: ck.training.attempts.len(),
                train: best.map_or(ck.training.train_accuracy, |a| a.train_accuracy),
                test: best.map_or(ck.training.test_accuracy, |a| a.test_accuracy),
            }
            .into());
        }
        Ok(ck)
    }

    /// Loads the trained checkpoint, verifying its checksum and its
    /// perfection on the corpus.
    pub fn checkpoint(&self) -> anyhow::Result<(Checkpoint, String)> {
        let (_, corpus_sha) = self.corpus()?;
        let path = self.path(CHECKPOINT_FILE);
        if !path.exists() {
            bail!("missing {}: run `fidam train` first", path.display());
        }
        let ck = load_checkpoint(&path, Some(&self.grammar))?;
        if !self.is_current("train", &self.train_key(&corpus_sha))? {
            bail!("{} is out of date for this config: rerun `fidam train`", path.display());
        }
        Ok((ck, file_sha256(&path)?))
    }

    /// Well-formed items of the configured split, optionally subsampled.
    pub fn evaluation_items(&self, corpus: &Corpus) -> anyhow::Result<Vec<CorpusItem>> {
        let pool: Vec<&CorpusItem> = match self.config.evaluation.split {
            EvalSplit::Train => corpus.train_items()?,
            EvalSplit::Test => corpus.test_items()?,
            EvalSplit::All => corpus.items().collect(),
        };
        let pool: Vec<&CorpusItem> =
            fidam_core::arr::evaluation_items(pool.into_iter().filter(|i| i.label == Label::WellFormed));
        let mut picked: Vec<usize> = (0..pool.len()).collect();
        if let Some(k) = self.config.evaluation.max_items {
            if k < pool.len() {
                let mut r = rng::stream(self.config.seed, rng::task_id(&[rng::label_id("eval_subsample")]));
                picked.shuffle(&mut r);
                picked.truncate(k);
                picked.sort_unstable();
            }
        }
        if picked.is_empty() {
            return Err(Error::EmptyCorpus.into());
        }
        Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
    }

    fn matrix_path(&self, method: Method, baseline: Option<BaselineKind>, item: usize) -> PathBuf {
        self.out
            .join("matrices")
            .join(method.name())
            .join(baseline.map_or("none", BaselineKind::name))
            .join(format!("item_{item:05}.txt"))
    }

    /// Writes matrix dumps for the selected evaluation items (all when
    /// `selector` is `None`). Returns the number of files written.
    pub fn attribute(&self, selector: Option<&[usize]>) -> anyhow::Result<usize> {
        let (corpus, _) = self.corpus()?;
        let (ck, ckpt_sha) = self.checkpoint()?;
        ck.ensure_converged()?;
        let items = self.evaluation_items(&corpus)?;
        let chosen: Vec<usize> = match selector {
            Some(s) => {
                if let Some(&bad) = s.iter().find(|&&k| k >= items.len()) {
                    bail!("item {bad} outside the {} evaluation items", items.len());
                }
                s.to_vec()
            }
            None => (0..items.len()).collect(),
        };
        let key = self.attribute_key(&ckpt_sha);
        let ctx = EvalContext::new(self, &ck, &corpus)?;
        let setup = ctx.setup(self);
        let mut written = 0;
        for &method in &self.config.attribution.methods {
            for baseline in self.config.columns() {
                if !method.supports(baseline) {
                    continue;
                }
                let results: Vec<_> = chosen
                    .par_iter()
                    .map(|&k| evaluate_item(method, baseline, &setup, &items[k], self.config.seed).map(|r| (k, r)))
                    .collect::<fidam_core::Result<_>>()?;
                for (k, (_, fallbacks, matrix)) in results {
                    let mut h = MatrixHeader::for_matrix(&matrix, self.config.seed);
                    h.baseline = baseline;
                    h.extra = vec![
                        ("config".into(), key.clone()),
                        ("stage".into(), "attribute".into()),
                        ("item".into(), k.to_string()),
                        ("tokens".into(), token_key(&items[k].tokens)),
                        ("fallbacks".into(), fallbacks.to_string()),
                    ];
                    let path = self.matrix_path(method, baseline, k);
                    std::fs::create_dir_all(path.parent().expect("nested path"))?;
                    std::fs::write(&path, write_matrix(&h, &matrix)?)?;
                    written += 1;
                }
            }
        }
        self.events.emit("attribute", "done", json!({ "matrices": written }));
        Ok(written)
    }

    /// Fills the grid, reusing matrix dumps from `attribute` when they match
    /// the current configuration.
    pub fn evaluate(&self) -> anyhow::Result<ArrReport> {
        let (corpus, corpus_sha) = self.corpus()?;
        let (ck, ckpt_sha) = self.checkpoint()?;
        ck.ensure_converged()?;
        let key = self.evaluate_key(&ckpt_sha);
        if self.is_current("evaluate", &key)? {
            self.events.emit("evaluate", "cached", json!({}));
            return self.load_report();
        }
        let t = Instant::now();
        let items = self.evaluation_items(&corpus)?;
        let attr_key = self.attribute_key(&ckpt_sha);
        let ctx = EvalContext::new(self, &ck, &corpus)?;
        let setup = ctx.setup(self);
        let columns = self.config.columns();
        let methods = self.config.attribution.methods.clone();
        let mut cells = Vec::new();
        for &method in &methods {
            for &baseline in &columns {
                let outcome = if !method.supports(baseline) {
                    Outcome::Unsupported
                } else {
                    let ct = Instant::now();
                    let scored: fidam_core::Result<Vec<(f64, usize)>> = items
                        .par_iter()
                        .enumerate()
                        .map(|(k, item)| {
                            if let Some(hit) = self.cached_matrix(method, baseline, k, item, &attr_key, &setup)? {
                                return Ok(hit);
                            }
                            evaluate_item(method, baseline, &setup, item, self.config.seed).map(|(a, f, _)| (a, f))
                        })
                        .collect();
                    match scored {
                        Ok(s) => {
                            let per_item: Vec<f64> = s.iter().map(|x| x.0).collect();
                            let fallbacks = s.iter().map(|x| x.1).sum();
                            let mean = per_item.iter().sum::<f64>() / per_item.len() as f64;
                            self.events.emit(
                                "evaluate",
                                "cell",
                                json!({ "method": method.name(), "baseline": baseline.map(BaselineKind::name),
                                        "arr": mean, "fallbacks": fallbacks,
                                        "elapsed_ms": ct.elapsed().as_millis() as u64 }),
                            );
                            if fallbacks > 0 {
                                self.events.emit(
                                    "evaluate",
                                    "observational_fallback",
                                    json!({ "method": method.name(), "count": fallbacks }),
                                );
                            }
                            Outcome::Score {
                                arr: mean,
                                items: per_item.len(),
                                fallbacks,
                                per_item: self.config.evaluation.per_item.then_some(per_item),
                            }
                        }
                        Err(e) => {
                            self.events.emit(
                                "evaluate",
                                "cell_failed",
                                json!({ "method": method.name(), "baseline": baseline.map(BaselineKind::name),
                                        "error": e.to_string() }),
                            );
                            Outcome::Failed { error: e.to_string() }
                        }
                    }
                };
                cells.push(Cell { method, baseline, outcome });
            }
        }
        let report = ArrReport {
            meta: ReportMeta {
                language: self.grammar.name.clone(),
                seed: self.config.seed,
                config_hash: self.config.hash(),
                corpus_sha256: corpus_sha,
                checkpoint_sha256: ckpt_sha,
                items: items.len(),
            },
            methods,
            columns,
            cells,
        };
        let files = self.write_report(&report)?;
        let names: Vec<&str> = files.iter().map(String::as_str).collect();
        self.record("evaluate", &key, &names)?;
        self.events.emit("evaluate", "done", json!({ "elapsed_ms": t.elapsed().as_millis() as u64 }));
        Ok(report)
    }

    fn cached_matrix(
        &self,
        method: Method,
        baseline: Option<BaselineKind>,
        k: usize,
        item: &CorpusItem,
        key: &str,
        setup: &EvalSetup,
    ) -> fidam_core::Result<Option<(f64, usize)>> {
        let path = self.matrix_path(method, baseline, k);
        if !path.exists() {
            return Ok(None);
        }
        let (h, m) = read_matrix(&path)?;
        if h.get("config") != Some(key) || h.get("tokens") != Some(token_key(&item.tokens).as_str()) {
            return Ok(None);
        }
        let fallbacks = h.get("fallbacks").and_then(|f| f.parse().ok()).unwrap_or(0);
        Ok(Some((arr(&m, &item.gold_pairs, &setup.arr)?, fallbacks)))
    }

    /// Writes the configured report formats; returns the file names.
    pub fn write_report(&self, report: &ArrReport) -> anyhow::Result<Vec<String>> {
        let mut files = vec![REPORT_JSON.to_string()];
        std::fs::write(self.path(REPORT_JSON), serde_json::to_string_pretty(report)? + "\n")?;
        for f in &self.config.output.formats {
            match f.as_str() {
                "csv" => {
                    std::fs::write(self.path(REPORT_CSV), report.to_csv())?;
                    files.push(REPORT_CSV.into());
                }
                "markdown" => {
                    let md = format!("<!-- config={} stage=evaluate -->\n{}", report.meta.config_hash, report.to_markdown());
                    std::fs::write(self.path(REPORT_MD), md)?;
                    files.push(REPORT_MD.into());
                }
                _ => {}
            }
        }
        Ok(files)
    }

    pub fn load_report(&self) -> anyhow::Result<ArrReport> {
        let p = self.path(REPORT_JSON);
        let text = std::fs::read_to_string(&p).map_err(|_| anyhow!("missing {}: run `fidam evaluate` first", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("reading {}", p.display()))
    }

    /// Loaded checkpoint, background and pool plus the evaluation items, for
    /// in-process attribution.
    pub fn eval_context(&self) -> anyhow::Result<(EvalContext, Vec<CorpusItem>)> {
        let (corpus, _) = self.corpus()?;
        let (ck, _) = self.checkpoint()?;
        ck.ensure_converged()?;
        let items = self.evaluation_items(&corpus)?;
        Ok((EvalContext::new(self, &ck, &corpus)?, items))
    }

    /// generate → train → evaluate, each cached.
    pub fn grid(&self) -> anyhow::Result<ArrReport> {
        self.generate()?;
        self.train()?;
        self.evaluate()
    }
}

fn token_key(tokens: &[usize]) -> String {
    tokens.iter().map(usize::to_string).collect::<Vec<_>>().join(".")
}

/// Read-only state shared by the attribution stages.
pub struct EvalContext {
    checkpoint: Checkpoint,
    background: Background,
    pool: LanguagePool,
}

impl EvalContext {
    fn new(p: &Pipeline, ck: &Checkpoint, corpus: &Corpus) -> anyhow::Result<Self> {
        let background = Background::from_corpus(corpus, p.grammar.alphabet.len())?;
        let pool = load_pool(p, &p.path("pool.txt"))?;
        Ok(Self { checkpoint: ck.clone(), background, pool })
    }

    pub fn setup<'a>(&'a self, p: &'a Pipeline) -> EvalSetup<'a> {
        let c = &p.config;
        EvalSetup {
            checkpoint: &self.checkpoint,
            grammar: &p.grammar,
            background: &self.background,
            pool: &self.pool,
            output: c.attribution.output,
            samples: c.attribution.samples,
            length_match: c.attribution.length_match,
            methods: &c.methods,
            arr: c.evaluation.arr_options(),
        }
    }
}

fn load_pool(p: &Pipeline, cache: &Path) -> anyhow::Result<LanguagePool> {
    let g = &p.grammar;
    if g.kind == fidam_core::grammar::LanguageKind::Custom && cache.exists() {
        let strings = fidam_core::grammar::read_pool(cache, g)?;
        return Ok(LanguagePool::Enumerated { grammar: g.clone(), strings });
    }
    Ok(LanguagePool::for_grammar(g, p.config.language.pool_limit)?)
}
