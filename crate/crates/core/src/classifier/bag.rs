use super::ModelConfig;
use crate::diff::{Scalar, Tape, Var};
use crate::error::Result;

// logits = W_out · Σ_i tanh(W e_i + b) + b_out: additive over positions.
pub(super) fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (v, e, h) = (cfg.vocab.len(), cfg.embedding_dim, cfg.hidden_dim);
    vec![
        ("embedding".into(), vec![v, e]),
        ("bag.w".into(), vec![h, e]),
        ("bag.b".into(), vec![h]),
        ("head.w".into(), vec![2, h]),
        ("head.b".into(), vec![2]),
    ]
}

pub(super) fn build<T: Scalar>(_cfg: &ModelConfig, tape: &mut Tape<T>, p: &[Var], emb: Var) -> Result<Var> {
    let n = tape.value(emb).rows();
    let mut acc: Option<Var> = None;
    for i in 0..n {
        let e = tape.row(emb, i)?;
        let z = tape.matmul(p[1], e)?;
        let z = tape.add(z, p[2])?;
        let a = tape.tanh(z)?;
        acc = Some(match acc {
            Some(s) => tape.add(s, a)?,
            None => a,
        });
    }
    let pooled = acc.expect("non-empty input");
    let logits = tape.matmul(p[3], pooled)?;
    tape.add(logits, p[4])
}
