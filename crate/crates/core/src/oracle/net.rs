use rand::Rng as _;

use crate::diff::{Scalar, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::Rng;

/// A small random network over an `N×d` input that exercises every
/// recorded operation.
#[derive(Clone, Debug)]
pub struct RandomNet {
    pub n: usize,
    pub d: usize,
    pub h: usize,
    w: Tensor,
    b: Tensor,
    v: Tensor,
    u: Tensor,
    c: Tensor,
    class: usize,
}

fn uniform(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.gen_range(-scale..scale);
    }
    t
}

impl RandomNet {
    pub fn new(rng: &mut Rng, n: usize, d: usize, h: usize) -> Self {
        Self {
            n,
            d,
            h,
            w: uniform(rng, &[h, n * d], 1.0),
            b: uniform(rng, &[h], 0.5),
            v: uniform(rng, &[2, h], 1.0),
            u: uniform(rng, &[d], 1.0),
            c: uniform(rng, &[h], 0.5),
            class: rng.gen_range(0..2),
        }
    }

    pub fn input(&self, rng: &mut Rng) -> Tensor {
        uniform(rng, &[self.n, self.d], 1.0)
    }

    /// Builds the scalar output on `tape` from the leaf `x`.
    pub fn build<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.constant(self.w.lift());
        let b = tape.constant(self.b.lift());
        let v = tape.constant(self.v.lift());
        let u = tape.constant(self.u.lift());
        let c = tape.constant(self.c.lift());

        let rows = (0..self.n).map(|i| tape.row(x, i)).collect::<Result<Vec<_>>>()?;
        let flat = tape.concat(&rows)?;
        let z = tape.matmul(w, flat)?;
        let z = tape.add(z, b)?;
        let a = tape.tanh(z)?;
        let s = tape.sigmoid(z)?;
        let m = tape.mul(a, s)?;
        let logits = tape.matmul(v, m)?;
        let ce = tape.cross_entropy(logits, self.class)?;

        let scores = tape.matmul(x, u)?;
        let attn = tape.softmax(scores)?;
        let xt = tape.transpose(x)?;
        let pooled = tape.matmul(xt, attn)?;
        let head = tape.slice(pooled, 0, 1)?;
        let head = tape.sum(head)?;

        let pair = tape.stack_rows(&[a, s])?;
        let pair = tape.add_row(pair, c)?;
        let sq = tape.mul(pair, pair)?;
        let reg = tape.sum(sq)?;
        let reg = tape.scale(reg, 0.1)?;

        let first = tape.index(a, 0)?;
        let out = tape.add(ce, head)?;
        let out = tape.add(out, reg)?;
        tape.sub(out, first)
    }

    pub fn eval(&self, x: &Tensor) -> f64 {
        let mut tape = Tape::<f64>::new();
        let leaf = tape.leaf(x.clone());
        let out = self.build(&mut tape, leaf).expect("well-shaped net");
        tape.value(out).item()
    }
}
