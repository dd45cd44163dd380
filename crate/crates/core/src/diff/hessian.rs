//! Second derivatives by forward-over-reverse: a reverse sweep carried out
//! in dual numbers yields exact Hessian-vector products.

use super::scalar::{Dual, Scalar};
use super::tape::{gradient, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Result of one Hessian-vector product sweep.
#[derive(Clone, Debug)]
pub struct Hvp {
    pub value: f64,
    pub gradient: Vec<Tensor<f64>>,
    /// `H · v`, laid out like the inputs.
    pub product: Vec<Tensor<f64>>,
}

/// Value and gradient of a scalar function built on a fresh tape.
pub fn value_and_gradient<F>(f: F, inputs: &[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &leaves)?;
    let grads = gradient(&tape, out, &leaves)?;
    Ok((tape.value(out).item(), grads))
}

/// Hessian of `f` at `inputs` applied to `directions`.
pub fn hvp<F>(f: F, inputs: &[Tensor<f64>], directions: &[Tensor<f64>]) -> Result<Hvp>
where
    F: Fn(&mut Tape<Dual>, &[Var]) -> Result<Var>,
{
    if inputs.len() != directions.len() {
        return Err(Error::Shape(format!(
            "{} inputs but {} directions",
            inputs.len(),
            directions.len()
        )));
    }
    let mut tape = Tape::new();
    let mut leaves = Vec::with_capacity(inputs.len());
    for (x, v) in inputs.iter().zip(directions) {
        if x.shape() != v.shape() {
            return Err(Error::Shape(format!("direction {:?} for input {:?}", v.shape(), x.shape())));
        }
        let data = x.data().iter().zip(v.data()).map(|(&a, &b)| Dual::new(a, b)).collect();
        leaves.push(tape.leaf(Tensor::new(x.shape().to_vec(), data)?));
    }
    let out = f(&mut tape, &leaves)?;
    let grads = gradient(&tape, out, &leaves)?;
    Ok(Hvp {
        value: tape.value(out).item().re(),
        gradient: grads.iter().map(|g| g.cast(|d| d.re)).collect(),
        product: grads.iter().map(|g| g.cast(|d| d.eps)).collect(),
    })
}

/// The `d×d` block `∂²f / ∂x_i ∂x_j` for a function of one `N×d` matrix input.
/// Entry `(a, b)` is the derivative with respect to `x[i][a]` and `x[j][b]`.
pub fn cross_hessian<F>(f: F, x: &Tensor<f64>, i: usize, j: usize) -> Result<Tensor<f64>>
where
    F: Fn(&mut Tape<Dual>, &[Var]) -> Result<Var>,
{
    if x.rank() != 2 || i >= x.rows() || j >= x.rows() {
        return Err(Error::Shape(format!("cross_hessian rows ({i}, {j}) of {:?}", x.shape())));
    }
    let d = x.cols();
    let mut block = vec![0.0; d * d];
    for b in 0..d {
        let mut dir = Tensor::zeros(x.shape());
        dir.data_mut()[j * d + b] = 1.0;
        let r = hvp(&f, std::slice::from_ref(x), std::slice::from_ref(&dir))?;
        let col = r.product[0].row(i);
        for a in 0..d {
            block[a * d + b] = col[a];
        }
    }
    Tensor::matrix(d, d, block)
}

impl<T: Scalar> Tensor<T> {
    /// Sum of all entries.
    pub fn total(&self) -> T {
        let mut acc = T::zero();
        for &v in self.data() {
            acc += v;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // f(x) = x0 * x1 over a 2×1 input: the cross block is exactly 1.
    fn bilinear<T: Scalar>(t: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        let a = t.row(v[0], 0)?;
        let b = t.row(v[0], 1)?;
        let p = t.mul(a, b)?;
        t.sum(p)
    }

    // f(x) = tanh(x0) + sigmoid(x1): no cross terms.
    fn additive<T: Scalar>(t: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        let a = t.row(v[0], 0)?;
        let b = t.row(v[0], 1)?;
        let a = t.tanh(a)?;
        let b = t.sigmoid(b)?;
        let s = t.add(a, b)?;
        t.sum(s)
    }

    #[test]
    fn bilinear_cross_block() {
        let x = Tensor::matrix(2, 1, vec![0.7, -1.3]).unwrap();
        let h = cross_hessian(bilinear::<Dual>, &x, 0, 1).unwrap();
        assert_eq!(h.data(), &[1.0]);
        let h = cross_hessian(bilinear::<Dual>, &x, 0, 0).unwrap();
        assert_eq!(h.data(), &[0.0]);
    }

    #[test]
    fn additive_cross_block_vanishes() {
        let x = Tensor::matrix(2, 1, vec![0.4, 2.0]).unwrap();
        let h = cross_hessian(additive::<Dual>, &x, 0, 1).unwrap();
        assert_eq!(h.data(), &[0.0]);
        // d²/dx² tanh = -2 tanh (1 - tanh²)
        let t = 0.4f64.tanh();
        let h = cross_hessian(additive::<Dual>, &x, 0, 0).unwrap();
        assert!((h.item() + 2.0 * t * (1.0 - t * t)).abs() < 1e-14);
    }

    #[test]
    fn hvp_gradient_matches_plain_gradient() {
        let x = Tensor::matrix(2, 1, vec![0.4, 2.0]).unwrap();
        let dir = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
        let r = hvp(additive::<Dual>, &[x.clone()], &[dir]).unwrap();
        let (v, g) = value_and_gradient(additive::<f64>, &[x]).unwrap();
        assert_eq!(r.value, v);
        assert_eq!(r.gradient[0], g[0]);
    }

    #[test]
    fn rejects_bad_rows() {
        let x = Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap();
        assert!(cross_hessian(bilinear::<Dual>, &x, 0, 2).is_err());
    }
}
