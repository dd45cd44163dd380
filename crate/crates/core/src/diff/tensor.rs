use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Dense row-major tensor of rank 0, 1 or 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(Error::Shape(format!("rank {} tensors are not supported", shape.len())));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    pub fn rows(&self) -> usize {
        if self.rank() == 2 { self.shape[0] } else { 1 }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn primal(&self) -> Tensor<f64> {
        self.cast(|v| v.re())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(self, op: &'static str) -> Result<Self> {
        if cfg!(debug_assertions) && !self.all_finite() {
            return Err(Error::NonFinite(op));
        }
        Ok(self)
    }
}

impl Tensor<f64> {
    pub fn lift<T: Scalar>(&self) -> Tensor<T> {
        self.cast(T::from_f64)
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!("{op}: {:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

pub fn zip_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    same_shape(a, b, op)?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with(a, b, "add", |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with(a, b, "sub", |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with(a, b, "mul", |x, y| x * y)
}

/// `(m×k)·(k×n)` or `(m×k)·(k)`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 {
        return Err(Error::Shape(format!("matmul lhs must be a matrix, got {:?}", a.shape)));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    match b.rank() {
        1 if b.shape[0] == k => {
            let mut out = vec![T::zero(); m];
            for (i, o) in out.iter_mut().enumerate() {
                let row = &a.data[i * k..(i + 1) * k];
                let mut acc = T::zero();
                for (&w, &x) in row.iter().zip(&b.data) {
                    acc += w * x;
                }
                *o = acc;
            }
            Ok(Tensor::vector(out))
        }
        2 if b.shape[0] == k => {
            let n = b.shape[1];
            let mut out = vec![T::zero(); m * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = a.data[i * k + p];
                    let brow = &b.data[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += aip * bv;
                    }
                }
            }
            Tensor::matrix(m, n, out)
        }
        _ => Err(Error::Shape(format!("matmul: {:?} · {:?}", a.shape, b.shape))),
    }
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 {
        return Err(Error::Shape(format!("transpose needs a matrix, got {:?}", a.shape)));
    }
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::matrix(n, m, out)
}

fn softmax_slice<T: Scalar>(x: &[T], out: &mut [T]) {
    let max = x.iter().map(|v| v.re()).fold(f64::NEG_INFINITY, f64::max);
    let shift = T::from_f64(max);
    let mut total = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - shift).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// Softmax over the last axis.
pub fn softmax<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() == 0 {
        return Err(Error::Shape("softmax of a scalar".into()));
    }
    let c = a.cols();
    let mut out = vec![T::zero(); a.len()];
    for (xs, os) in a.data.chunks(c).zip(out.chunks_mut(c)) {
        softmax_slice(xs, os);
    }
    Ok(Tensor { shape: a.shape.clone(), data: out })
}

/// `logsumexp(z) - z[target]` for a logit vector.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    if logits.rank() != 1 || target >= logits.len() {
        return Err(Error::Shape(format!(
            "cross_entropy needs a logit vector covering class {target}, got {:?}",
            logits.shape
        )));
    }
    let max = logits.data.iter().map(|v| v.re()).fold(f64::NEG_INFINITY, f64::max);
    let shift = T::from_f64(max);
    let mut total = T::zero();
    for &v in &logits.data {
        total += (v - shift).exp();
    }
    Ok(Tensor::scalar(total.ln() + shift - logits.data[target]))
}

/// Concatenation of vectors.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        if p.rank() != 1 {
            return Err(Error::Shape(format!("concat expects vectors, got {:?}", p.shape)));
        }
        data.extend_from_slice(&p.data);
    }
    Ok(Tensor::vector(data))
}

pub fn slice<T: Scalar>(a: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    if a.rank() != 1 || start + len > a.len() {
        return Err(Error::Shape(format!("slice {start}..{} of {:?}", start + len, a.shape)));
    }
    Ok(Tensor::vector(a.data[start..start + len].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let i = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(matmul(&i, &a).unwrap(), a);
        let v = Tensor::vector(vec![1.0, 1.0, 1.0]);
        assert_eq!(matmul(&a, &v).unwrap().data(), &[6.0, 15.0]);
        assert!(matmul(&a, &i).is_err());
    }

    #[test]
    fn softmax_of_constant_is_uniform() {
        let s = softmax(&Tensor::vector(vec![3.0; 4])).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn shape_validation() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(add(&Tensor::vector(vec![1.0]), &Tensor::vector(vec![1.0, 2.0])).is_err());
        assert!(slice(&Tensor::vector(vec![1.0, 2.0]), 1, 2).is_err());
    }

    #[test]
    fn cross_entropy_matches_definition() {
        let z = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let ce = cross_entropy(&z, 2).unwrap().item();
        let lse = (0.5f64.exp() + (-1.0f64).exp() + 2.0f64.exp()).ln();
        assert!((ce - (lse - 2.0)).abs() < 1e-14);
    }
}
