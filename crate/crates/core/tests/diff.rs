use fidam_core::diff::{cross_hessian, gradient, value_and_gradient, Dual, Scalar, Tape, Tensor, Var};
use fidam_core::oracle::{central_cross_hessian, central_gradient, RandomNet};
use fidam_core::rng;
use proptest::prelude::*;

fn net_for(seed: u64) -> (RandomNet, Tensor) {
    let mut r = rng::stream(seed, 0);
    let net = RandomNet::new(&mut r, 3, 2, 4);
    let x = net.input(&mut r);
    (net, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>()) {
        let (net, x) = net_for(seed);
        let (_, g) = value_and_gradient(|t, v| net.build(t, v[0]), &[x.clone()]).unwrap();
        let fd = central_gradient(|p| net.eval(p), &x, 1e-5);
        for (&a, &b) in g[0].data().iter().zip(fd.data()) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()) + 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn cross_hessian_matches_finite_differences(seed in any::<u64>(), i in 0usize..3, j in 0usize..3) {
        let (net, x) = net_for(seed);
        let h = cross_hessian(|t: &mut Tape<Dual>, v: &[Var]| net.build(t, v[0]), &x, i, j).unwrap();
        let fd = central_cross_hessian(|p| net.eval(p), &x, i, j, 1e-4);
        for (&a, &b) in h.data().iter().zip(fd.data()) {
            prop_assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn cross_hessian_is_symmetric(seed in any::<u64>(), i in 0usize..3, j in 0usize..3) {
        let (net, x) = net_for(seed);
        let f = |t: &mut Tape<Dual>, v: &[Var]| net.build(t, v[0]);
        let hij = cross_hessian(f, &x, i, j).unwrap();
        let hji = cross_hessian(f, &x, j, i).unwrap();
        let d = x.cols();
        for a in 0..d {
            for b in 0..d {
                prop_assert!((hij.at(a, b) - hji.at(b, a)).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn rerunning_a_record_is_bit_identical() {
    let (net, x) = net_for(7);
    let run = || {
        let mut t = Tape::<f64>::new();
        let leaf = t.leaf(x.clone());
        let out = net.build(&mut t, leaf).unwrap();
        let g = gradient(&t, out, &[leaf]).unwrap();
        (t.value(out).item().to_bits(), g[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn bilinear_block_is_outer_product() {
    let w = [0.5, -1.0, 2.0];
    let u = [1.5, 0.25, -0.75];
    let f = |t: &mut Tape<Dual>, v: &[Var]| {
        let wv = t.constant(Tensor::vector(w.iter().map(|&a| Dual::from_f64(a)).collect()));
        let uv = t.constant(Tensor::vector(u.iter().map(|&a| Dual::from_f64(a)).collect()));
        let e0 = t.row(v[0], 0)?;
        let e2 = t.row(v[0], 2)?;
        let a = t.mul(wv, e0)?;
        let a = t.sum(a)?;
        let b = t.mul(uv, e2)?;
        let b = t.sum(b)?;
        t.mul(a, b)
    };
    let x = Tensor::matrix(3, 3, (0..9).map(|k| k as f64 * 0.1).collect()).unwrap();
    let h = cross_hessian(f, &x, 0, 2).unwrap();
    for a in 0..3 {
        for b in 0..3 {
            assert!((h.at(a, b) - w[a] * u[b]).abs() < 1e-15);
        }
    }
    let zero = cross_hessian(f, &x, 0, 1).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
}

#[test]
fn elementary_values() {
    assert_eq!(0.0f64.sigmoid(), 0.5);
    let mut t = Tape::<f64>::new();
    let z = t.leaf(Tensor::vector(vec![2.0; 4]));
    let p = t.softmax(z).unwrap();
    assert!(t.value(p).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
}
