use super::ModelConfig;
use crate::diff::{Scalar, Tape, Var};
use crate::error::Result;

pub(super) fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (v, e, h) = (cfg.vocab.len(), cfg.embedding_dim, cfg.hidden_dim);
    let dh = h / cfg.heads;
    let mut out = vec![
        ("embedding".into(), vec![v, e]),
        ("input.w".into(), vec![h, e]),
        ("position".into(), vec![cfg.max_positions, h]),
    ];
    for k in 0..cfg.heads {
        out.push((format!("attn.{k}.q"), vec![dh, h]));
        out.push((format!("attn.{k}.k"), vec![dh, h]));
        out.push((format!("attn.{k}.v"), vec![dh, h]));
        out.push((format!("attn.{k}.o"), vec![h, dh]));
    }
    out.extend([
        ("ffn.w1".into(), vec![h, h]),
        ("ffn.b1".into(), vec![h]),
        ("ffn.w2".into(), vec![h, h]),
        ("ffn.b2".into(), vec![h]),
        ("head.w".into(), vec![2, h]),
        ("head.b".into(), vec![2]),
    ]);
    out
}

// x · wᵀ for a batch of row vectors.
fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var) -> Result<Var> {
    let wt = tape.transpose(w)?;
    tape.matmul(x, wt)
}

/// One encoder layer without masking; the head reads the last position.
pub(super) fn build<T: Scalar>(cfg: &ModelConfig, tape: &mut Tape<T>, p: &[Var], emb: Var) -> Result<Var> {
    let n = tape.value(emb).rows();
    let dh = cfg.hidden_dim / cfg.heads;
    let (win, pos) = (p[1], p[2]);
    let base = 3 + 4 * cfg.heads;

    let h0 = linear(tape, emb, win)?;
    let rows = (0..n).map(|i| tape.row(pos, i)).collect::<Result<Vec<_>>>()?;
    let pos = tape.stack_rows(&rows)?;
    let h0 = tape.add(h0, pos)?;

    let mut attn: Option<Var> = None;
    for k in 0..cfg.heads {
        let [wq, wk, wv, wo] = [p[3 + 4 * k], p[4 + 4 * k], p[5 + 4 * k], p[6 + 4 * k]];
        let q = linear(tape, h0, wq)?;
        let kk = linear(tape, h0, wk)?;
        let v = linear(tape, h0, wv)?;
        let s = linear(tape, q, kk)?;
        let s = tape.scale(s, 1.0 / (dh as f64).sqrt())?;
        let a = tape.softmax(s)?;
        let o = tape.matmul(a, v)?;
        let o = linear(tape, o, wo)?;
        attn = Some(match attn {
            Some(acc) => tape.add(acc, o)?,
            None => o,
        });
    }
    let h1 = match attn {
        Some(a) => tape.add(h0, a)?,
        None => h0,
    };

    let f = linear(tape, h1, p[base])?;
    let f = tape.add_row(f, p[base + 1])?;
    let f = tape.tanh(f)?;
    let f = linear(tape, f, p[base + 2])?;
    let f = tape.add_row(f, p[base + 3])?;
    let h2 = tape.add(h1, f)?;

    let last = tape.row(h2, n - 1)?;
    let logits = tape.matmul(p[base + 4], last)?;
    tape.add(logits, p[base + 5])
}
