use crate::diff::Tensor;

/// Central differences of `f` at `x` with step `h`.
pub fn central_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe);
        probe.data_mut()[k] = orig - h;
        let down = f(&probe);
        probe.data_mut()[k] = orig;
        out.data_mut()[k] = (up - down) / (2.0 * h);
    }
    out
}

/// Second-order central differences for the `d×d` block `∂²f/∂x_i∂x_j` of an
/// `N×d` input.
pub fn central_cross_hessian(f: impl Fn(&Tensor) -> f64, x: &Tensor, i: usize, j: usize, h: f64) -> Tensor {
    let d = x.cols();
    let mut out = vec![0.0; d * d];
    let mut probe = x.clone();
    for a in 0..d {
        for b in 0..d {
            let (p, q) = (i * d + a, j * d + b);
            let mut eval = |sp: f64, sq: f64| {
                probe.data_mut()[p] += sp * h;
                probe.data_mut()[q] += sq * h;
                let v = f(&probe);
                probe.data_mut()[p] -= sp * h;
                probe.data_mut()[q] -= sq * h;
                v
            };
            let v = eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0);
            out[a * d + b] = v / (4.0 * h * h);
        }
    }
    Tensor::matrix(d, d, out).expect("square block")
}
