use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::{accuracy, Arch, Model, ModelConfig};
use crate::diff::{gradient, Tape, Tensor};
use crate::error::{Error, Result};
use crate::grammar::{Corpus, CorpusItem};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// Epoch budget per attempt.
    pub epochs: usize,
    /// Keep training at least this long before stopping at perfection.
    pub min_epochs: usize,
    /// Extra attempts with fresh seeds after a non-converged one.
    pub retries: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            eps: 1e-8,
            batch_size: 48,
            epochs: 500,
            min_epochs: 0,
            retries: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptSummary {
    pub seed: u64,
    pub epochs: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    /// Root seed passed to training.
    pub seed: u64,
    /// Seed of the attempt that produced the parameters.
    pub attempt_seed: u64,
    pub epochs: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub converged: bool,
    pub loss_curve: Vec<f64>,
    pub attempts: Vec<AttemptSummary>,
}

struct AdamW {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl AdamW {
    fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, cfg: &TrainConfig, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, p) in params.iter_mut().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            }
            let v = self.v[k].data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            }
            let (m, v) = (self.m[k].data(), self.v[k].data());
            for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                *pi -= cfg.lr * cfg.weight_decay * *pi;
                *pi -= cfg.lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
            }
        }
    }
}

/// Loss and parameter gradients for one item.
pub(crate) fn item_gradient(model: &Model, item: &CorpusItem) -> Result<(f64, Vec<Tensor>)> {
    if model.config().arch == Arch::Lstm {
        let vocab = model.config().vocab.len();
        if let Some(&t) = item.tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::UnknownToken { token: t, vocab });
        }
        return Ok(super::lstm::item_gradient(model.config(), model.params(), &item.tokens, item.label.class()));
    }
    tape_gradient(model, item)
}

/// The same quantity through the generic tape.
pub(crate) fn tape_gradient(model: &Model, item: &CorpusItem) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::<f64>::new();
    let leaves: Vec<_> = model.params().iter().map(|p| tape.leaf(p.clone())).collect();
    let mut rows = Vec::with_capacity(item.tokens.len());
    for &t in &item.tokens {
        let vocab = model.config().vocab.len();
        if t >= vocab {
            return Err(Error::UnknownToken { token: t, vocab });
        }
        rows.push(tape.row(leaves[0], t)?);
    }
    let emb = tape.stack_rows(&rows)?;
    let logits = model.build_with(&mut tape, &leaves, emb)?;
    let loss = tape.cross_entropy(logits, item.label.class())?;
    let grads = gradient(&tape, loss, &leaves)?;
    Ok((tape.value(loss).item(), grads))
}

fn attempt(
    config: &ModelConfig,
    train: &[&CorpusItem],
    test: &[&CorpusItem],
    seed: u64,
    tc: &TrainConfig,
) -> Result<(Model, AttemptSummary, Vec<f64>)> {
    let mut init_rng = rng::stream(seed, rng::label_id("init"));
    let mut model = Model::init(config.clone(), &mut init_rng)?;
    let mut opt = AdamW::new(model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::new();
    let mut summary = AttemptSummary { seed, epochs: 0, train_accuracy: 0.0, test_accuracy: 0.0 };

    for epoch in 0..tc.epochs {
        let mut shuffle = rng::stream(seed, rng::task_id(&[rng::label_id("shuffle"), epoch as u64]));
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(tc.batch_size.max(1)) {
            let mut acc: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
            for &k in batch {
                let (loss, grads) = item_gradient(&model, train[k])?;
                total += loss;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, &y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for a in &mut acc {
                for x in a.data_mut() {
                    *x *= scale;
                }
            }
            opt.step(tc, model.params_mut(), &acc);
        }
        curve.push(total / train.len() as f64);
        summary.epochs = epoch + 1;
        summary.train_accuracy = accuracy(&model, train.iter().copied())?;
        summary.test_accuracy = if test.is_empty() { 1.0 } else { accuracy(&model, test.iter().copied())? };
        log::debug!(
            "seed {seed} epoch {}: loss {:.5} train {:.4} test {:.4}",
            epoch + 1,
            curve[epoch],
            summary.train_accuracy,
            summary.test_accuracy
        );
        if summary.train_accuracy == 1.0 && summary.test_accuracy == 1.0 && epoch + 1 >= tc.min_epochs {
            break;
        }
    }
    Ok((model, summary, curve))
}

/// Trains with retries and returns the last attempt's checkpoint, converged
/// or not. The record says which.
pub fn fit(config: &ModelConfig, corpus: &Corpus, seed: u64, tc: &TrainConfig) -> Result<Checkpoint> {
    let train = corpus.train_items()?;
    let test = corpus.test_items()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut attempts = Vec::new();
    let mut last = None;
    for k in 0..=tc.retries {
        // Kept below 2^63 so the checkpoint header (TOML) can store it.
        let attempt_seed =
            if k == 0 { seed } else { rng::task_id(&[seed, rng::label_id("retry"), k as u64]) & i64::MAX as u64 };
        let (model, summary, curve) = attempt(config, &train, &test, attempt_seed, tc)?;
        let done = summary.train_accuracy == 1.0 && summary.test_accuracy == 1.0;
        if !done {
            log::warn!(
                "attempt {} (seed {attempt_seed}) stopped at train {:.4} test {:.4}",
                k + 1,
                summary.train_accuracy,
                summary.test_accuracy
            );
        }
        attempts.push(summary.clone());
        last = Some((model, summary, curve, attempt_seed));
        if done {
            break;
        }
    }
    let (model, summary, curve, attempt_seed) = last.expect("at least one attempt");
    let record = TrainingRecord {
        seed,
        attempt_seed,
        epochs: summary.epochs,
        train_accuracy: summary.train_accuracy,
        test_accuracy: summary.test_accuracy,
        converged: summary.train_accuracy == 1.0 && summary.test_accuracy == 1.0,
        loss_curve: curve,
        attempts,
    };
    Ok(Checkpoint { model, training: record, corpus: None })
}

/// Like [`fit`], but non-convergence after all retries is an error.
pub fn train(config: &ModelConfig, corpus: &Corpus, seed: u64, tc: &TrainConfig) -> Result<Checkpoint> {
    let ck = fit(config, corpus, seed, tc)?;
    if !ck.training.converged {
        let best = ck
            .training
            .attempts
            .iter()
            .max_by(|a, b| (a.train_accuracy + a.test_accuracy).total_cmp(&(b.train_accuracy + b.test_accuracy)))
            .expect("attempts recorded");
        return Err(Error::NonConvergence {
            attempts: ck.training.attempts.len(),
            train: best.train_accuracy,
            test: best.test_accuracy,
        });
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Label;

    #[test]
    fn handwritten_backprop_matches_tape() {
        let cfg = ModelConfig {
            arch: Arch::Lstm,
            vocab: vec!["a".into(), "b".into(), "c".into()],
            embedding_dim: 3,
            hidden_dim: 5,
            layers: 1,
            heads: 2,
            max_positions: 0,
        };
        for seed in 0..10 {
            let model = Model::init(cfg.clone(), &mut rng::stream(seed, 0)).unwrap();
            let item = CorpusItem {
                tokens: vec![0, 2, 1, 1, 0, 2],
                label: if seed % 2 == 0 { Label::WellFormed } else { Label::Corrupted },
                gold_pairs: vec![],
            };
            let (l1, g1) = item_gradient(&model, &item).unwrap();
            let (l2, g2) = tape_gradient(&model, &item).unwrap();
            assert!((l1 - l2).abs() < 1e-12);
            for (a, b) in g1.iter().zip(&g2) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() < 1e-12, "{x} vs {y}");
                }
            }
        }
    }
}
