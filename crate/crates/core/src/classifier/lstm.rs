use super::ModelConfig;
use crate::diff::{Scalar, Tape, Tensor, Var};
use crate::error::Result;

// Parameter order: embedding, lstm.w, lstm.b, head.w, head.b.
const W: usize = 1;
const B: usize = 2;
const HEAD_W: usize = 3;
const HEAD_B: usize = 4;

pub(super) fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (v, e, h) = (cfg.vocab.len(), cfg.embedding_dim, cfg.hidden_dim);
    vec![
        ("embedding".into(), vec![v, e]),
        ("lstm.w".into(), vec![4 * h, e + h]),
        ("lstm.b".into(), vec![4 * h]),
        ("head.w".into(), vec![2, h]),
        ("head.b".into(), vec![2]),
    ]
}

pub(super) fn bias_forget_gate(cfg: &ModelConfig, params: &mut [Tensor]) {
    let h = cfg.hidden_dim;
    for v in &mut params[B].data_mut()[h..2 * h] {
        *v += 1.0;
    }
}

/// Hidden and cell vectors after some prefix of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zero(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

// Gate order in the stacked weight: input, forget, cell, output.
pub(super) fn build<T: Scalar>(cfg: &ModelConfig, tape: &mut Tape<T>, p: &[Var], emb: Var) -> Result<Var> {
    let hd = cfg.hidden_dim;
    let n = tape.value(emb).rows();
    let mut h = tape.constant(Tensor::zeros(&[hd]));
    let mut c = tape.constant(Tensor::zeros(&[hd]));
    for i in 0..n {
        let x = tape.row(emb, i)?;
        let xh = tape.concat(&[x, h])?;
        let z = tape.matmul(p[W], xh)?;
        let z = tape.add(z, p[B])?;
        let zi = tape.slice(z, 0, hd)?;
        let zf = tape.slice(z, hd, hd)?;
        let zg = tape.slice(z, 2 * hd, hd)?;
        let zo = tape.slice(z, 3 * hd, hd)?;
        let ig = tape.sigmoid(zi)?;
        let fg = tape.sigmoid(zf)?;
        let g = tape.tanh(zg)?;
        let og = tape.sigmoid(zo)?;
        let keep = tape.mul(fg, c)?;
        let write = tape.mul(ig, g)?;
        c = tape.add(keep, write)?;
        let tc = tape.tanh(c)?;
        h = tape.mul(og, tc)?;
    }
    let logits = tape.matmul(p[HEAD_W], h)?;
    tape.add(logits, p[HEAD_B])
}

pub(super) fn step(cfg: &ModelConfig, params: &[Tensor], state: &LstmState, x: &[f64]) -> LstmState {
    let hd = cfg.hidden_dim;
    let w = &params[W];
    let b = params[B].data();
    let width = w.cols();
    let mut xh = Vec::with_capacity(width);
    xh.extend_from_slice(x);
    xh.extend_from_slice(&state.h);
    let mut z = vec![0.0; 4 * hd];
    for (k, zk) in z.iter_mut().enumerate() {
        let row = &w.data()[k * width..(k + 1) * width];
        let mut acc = 0.0;
        for (&wv, &xv) in row.iter().zip(&xh) {
            acc += wv * xv;
        }
        *zk = acc + b[k];
    }
    let mut next = LstmState::zero(hd);
    for u in 0..hd {
        let ig = z[u].sigmoid();
        let fg = z[hd + u].sigmoid();
        let g = z[2 * hd + u].tanh();
        let og = z[3 * hd + u].sigmoid();
        let c = fg * state.c[u] + ig * g;
        next.c[u] = c;
        next.h[u] = og * c.tanh();
    }
    next
}

pub(super) fn head(params: &[Tensor], state: &LstmState) -> [f64; 2] {
    let w = &params[HEAD_W];
    let b = params[HEAD_B].data();
    let mut out = [0.0; 2];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (&wv, &hv) in w.row(k).iter().zip(&state.h) {
            acc += wv * hv;
        }
        *o = acc + b[k];
    }
    out
}

/// Cross-entropy loss and parameter gradients by hand-written
/// backpropagation through time. Agrees with the tape to rounding; several
/// times faster for training.
pub(super) fn item_gradient(
    cfg: &ModelConfig,
    params: &[Tensor],
    tokens: &[usize],
    class: usize,
) -> (f64, Vec<Tensor>) {
    let (e, hd) = (cfg.embedding_dim, cfg.hidden_dim);
    let width = e + hd;
    let w = params[W].data();
    let emb = &params[0];

    struct Step {
        xh: Vec<f64>,
        gates: Vec<f64>,
        c_prev: Vec<f64>,
        tc: Vec<f64>,
    }
    let mut steps = Vec::with_capacity(tokens.len());
    let mut state = LstmState::zero(hd);
    for &t in tokens {
        let mut xh = Vec::with_capacity(width);
        xh.extend_from_slice(emb.row(t));
        xh.extend_from_slice(&state.h);
        let next = step(cfg, params, &state, emb.row(t));
        // Recompute the activated gates; cheaper than threading them out of `step`.
        let b = params[B].data();
        let mut gates = vec![0.0; 4 * hd];
        for (k, gk) in gates.iter_mut().enumerate() {
            let row = &w[k * width..(k + 1) * width];
            let mut acc = 0.0;
            for (&wv, &xv) in row.iter().zip(&xh) {
                acc += wv * xv;
            }
            let z = acc + b[k];
            *gk = if (2 * hd..3 * hd).contains(&k) { z.tanh() } else { z.sigmoid() };
        }
        let tc = next.c.iter().map(|c| c.tanh()).collect();
        steps.push(Step { xh, gates, c_prev: state.c.clone(), tc });
        state = next;
    }

    let logits = head(params, &state);
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    let loss = lse - logits[class];
    let p = [(logits[0] - lse).exp(), (logits[1] - lse).exp()];
    let dlogits = [p[0] - f64::from(class == 0), p[1] - f64::from(class == 1)];

    let mut grads: Vec<Tensor> = params.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut dh = vec![0.0; hd];
    {
        let hw = params[HEAD_W].data();
        let (dhw, rest) = grads[HEAD_W..].split_first_mut().unwrap();
        for k in 0..2 {
            for u in 0..hd {
                dhw.data_mut()[k * hd + u] += dlogits[k] * state.h[u];
                dh[u] += hw[k * hd + u] * dlogits[k];
            }
            rest[0].data_mut()[k] += dlogits[k];
        }
    }

    let mut dc = vec![0.0; hd];
    let mut dz = vec![0.0; 4 * hd];
    for (s, &t) in steps.iter().zip(tokens).rev() {
        let g = &s.gates;
        for u in 0..hd {
            let (ig, fg, gg, og) = (g[u], g[hd + u], g[2 * hd + u], g[3 * hd + u]);
            let tc = s.tc[u];
            let d_o = dh[u] * tc;
            dc[u] += dh[u] * og * (1.0 - tc * tc);
            let di = dc[u] * gg;
            let dg = dc[u] * ig;
            let df = dc[u] * s.c_prev[u];
            dz[u] = di * ig * (1.0 - ig);
            dz[hd + u] = df * fg * (1.0 - fg);
            dz[2 * hd + u] = dg * (1.0 - gg * gg);
            dz[3 * hd + u] = d_o * og * (1.0 - og);
            dc[u] *= fg;
        }
        let mut dxh = vec![0.0; width];
        {
            let dw = grads[W].data_mut();
            for (k, &dzk) in dz.iter().enumerate() {
                let row = &w[k * width..(k + 1) * width];
                let drow = &mut dw[k * width..(k + 1) * width];
                for p in 0..width {
                    drow[p] += dzk * s.xh[p];
                    dxh[p] += row[p] * dzk;
                }
            }
        }
        for (db, &d) in grads[B].data_mut().iter_mut().zip(&dz) {
            *db += d;
        }
        for (de, &d) in grads[0].data_mut()[t * e..(t + 1) * e].iter_mut().zip(&dxh[..e]) {
            *de += d;
        }
        dh.copy_from_slice(&dxh[e..]);
    }
    (loss, grads)
}
