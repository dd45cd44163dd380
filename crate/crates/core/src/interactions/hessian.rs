//! Second-order methods on the embedding matrix.

use super::{HessianAggregation, InteractionMatrix, Method, MethodConfig};
use crate::classifier::Model;
use crate::diff::{hvp, Dual, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::removal::{OutputMode, StaticBaseline};

/// The scalar the methods differentiate, built from the two logits.
pub fn output_node<T: Scalar>(tape: &mut Tape<T>, logits: Var, mode: OutputMode) -> Result<Var> {
    match mode {
        OutputMode::LogitWellformed => tape.index(logits, 1),
        OutputMode::LogitDiff => {
            let a = tape.index(logits, 1)?;
            let b = tape.index(logits, 0)?;
            tape.sub(a, b)
        }
        OutputMode::ProbWellformed => {
            let p = tape.softmax(logits)?;
            tape.index(p, 1)
        }
    }
}

fn model_fn(model: &Model, mode: OutputMode) -> impl Fn(&mut Tape<Dual>, Var) -> Result<Var> + '_ {
    move |t, e| {
        let logits = model.build_logits(t, e)?;
        output_node(t, logits, mode)
    }
}

fn check_input(x: &Tensor) -> Result<(usize, usize)> {
    if x.rank() != 2 || x.rows() == 0 {
        return Err(Error::Shape(format!("expected an N×d input, got {:?}", x.shape())));
    }
    Ok((x.rows(), x.cols()))
}

/// `H · dir` where `dir` is `v` on row `j` and zero elsewhere.
fn row_hvp<F>(f: &F, x: &Tensor, j: usize, v: &[f64]) -> Result<crate::diff::Hvp>
where
    F: Fn(&mut Tape<Dual>, Var) -> Result<Var>,
{
    let d = x.cols();
    let mut dir = Tensor::zeros(x.shape());
    dir.data_mut()[j * d..(j + 1) * d].copy_from_slice(v);
    hvp(|t: &mut Tape<Dual>, vars: &[Var]| f(t, vars[0]), std::slice::from_ref(x), std::slice::from_ref(&dir))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `N×N` squared cross-partial scores of `f` at `x`. With `times_input`
/// each block is weighted by the embeddings on both sides first.
pub fn hessian_scores<F>(f: F, x: &Tensor, times_input: bool, aggregation: HessianAggregation) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<Dual>, Var) -> Result<Var>,
{
    let (n, d) = check_input(x)?;
    let ones = vec![1.0; d];
    let weight = |i: usize| if times_input { x.row(i).to_vec() } else { ones.clone() };
    let mut scores = vec![0.0; n * n];
    match aggregation {
        HessianAggregation::SumThenSquare => {
            for j in 0..n {
                let r = row_hvp(&f, x, j, &weight(j))?;
                for i in 0..n {
                    let s = dot(&weight(i), r.product[0].row(i));
                    scores[i * n + j] = s * s;
                }
            }
        }
        HessianAggregation::SumOfSquares => {
            for j in 0..n {
                let wj = weight(j);
                for b in 0..d {
                    let mut e = vec![0.0; d];
                    e[b] = 1.0;
                    let r = row_hvp(&f, x, j, &e)?;
                    for i in 0..n {
                        let wi = weight(i);
                        let col = r.product[0].row(i);
                        scores[i * n + j] += (0..d).map(|a| (wi[a] * col[a] * wj[b]).powi(2)).sum::<f64>();
                    }
                }
            }
        }
    }
    symmetrize(&mut scores, n);
    Ok(scores)
}

fn symmetrize(scores: &mut [f64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (scores[i * n + j] + scores[j * n + i]);
            scores[i * n + j] = v;
            scores[j * n + i] = v;
        }
    }
}

pub fn hessian(model: &Model, x: &[usize], output: OutputMode, cfg: &MethodConfig) -> Result<InteractionMatrix> {
    let e = model.embed(x)?;
    let s = hessian_scores(model_fn(model, output), &e, false, cfg.hessian_aggregation)?;
    InteractionMatrix::new(x.len(), s, Method::Hessian, None)
}

pub fn hessian_x_input(model: &Model, x: &[usize], output: OutputMode, cfg: &MethodConfig) -> Result<InteractionMatrix> {
    let e = model.embed(x)?;
    let s = hessian_scores(model_fn(model, output), &e, true, cfg.hessian_aggregation)?;
    InteractionMatrix::new(x.len(), s, Method::HessianXInput, None)
}

/// Exact integrals of `−ln γ` and `−γ ln γ` over `[a, b]`.
fn cell_weights(a: f64, b: f64) -> (f64, f64) {
    let first = |g: f64| if g == 0.0 { 0.0 } else { g - g * g.ln() };
    let second = |g: f64| if g == 0.0 { 0.0 } else { g * g / 4.0 - g * g / 2.0 * g.ln() };
    (first(b) - first(a), second(b) - second(a))
}

/// Integrated Hessians of `f` from `baseline` to `x`.
///
/// The double path integral over `(α, β)` depends on the product only, so it
/// collapses to one integral over `γ = αβ` with density `−ln γ`. `g(γ)` is
/// evaluated at the midpoint of each of `steps` cells and the density is
/// integrated exactly per cell. Row sums reproduce integrated gradients.
pub fn integrated_hessians_scores<F>(f: F, x: &Tensor, baseline: &Tensor, steps: usize) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<Dual>, Var) -> Result<Var>,
{
    let (n, d) = check_input(x)?;
    if baseline.shape() != x.shape() {
        return Err(Error::Shape(format!("baseline {:?} for input {:?}", baseline.shape(), x.shape())));
    }
    if steps == 0 {
        return Err(Error::Invalid("integrated Hessians needs at least 1 step".into()));
    }
    let delta: Vec<f64> = x.data().iter().zip(baseline.data()).map(|(a, b)| a - b).collect();
    let drow = |i: usize| &delta[i * d..(i + 1) * d];
    let mut scores = vec![0.0; n * n];
    for k in 0..steps {
        let (a, b) = (k as f64 / steps as f64, (k + 1) as f64 / steps as f64);
        let (w_grad, w_hess) = cell_weights(a, b);
        let gamma = 0.5 * (a + b);
        let point: Vec<f64> = baseline.data().iter().zip(&delta).map(|(z, dz)| z + gamma * dz).collect();
        let point = Tensor::matrix(n, d, point)?;
        for j in 0..n {
            let r = row_hvp(&f, &point, j, drow(j))?;
            if j == 0 {
                for i in 0..n {
                    scores[i * n + i] += w_grad * dot(drow(i), r.gradient[0].row(i));
                }
            }
            for i in 0..n {
                scores[i * n + j] += w_hess * dot(drow(i), r.product[0].row(i));
            }
        }
    }
    symmetrize(&mut scores, n);
    Ok(scores)
}

pub fn integrated_hessians(
    model: &Model,
    x: &[usize],
    baseline: &StaticBaseline,
    output: OutputMode,
    cfg: &MethodConfig,
) -> Result<InteractionMatrix> {
    let e = model.embed(x)?;
    let b = match baseline {
        StaticBaseline::Zero => Tensor::zeros(e.shape()),
        StaticBaseline::Tokens(t) if t.len() == x.len() => model.embed(t)?,
        StaticBaseline::Tokens(t) => {
            return Err(Error::Baseline(format!("baseline of length {} for input of length {}", t.len(), x.len())))
        }
    };
    let s = integrated_hessians_scores(model_fn(model, output), &e, &b, cfg.ih_steps)?;
    InteractionMatrix::new(x.len(), s, Method::IntegratedHessians, None)
}
