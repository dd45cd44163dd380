use fidam_core::classifier::{Arch, Model, ModelConfig};
use fidam_core::diff::{Dual, Tape, Tensor, Var};
use fidam_core::error::{Error, Result};
use fidam_core::grammar::{build_grammar, GrammarParams};
use fidam_core::interactions::{
    archipelago_with, attribute, group_ablation, hessian, hessian_scores, integrated_hessians,
    integrated_hessians_scores, parse_matrix, sii, sii_matrix, stii, stii_matrix, write_matrix, CoalitionMode,
    HessianAggregation, InteractionMatrix, MatrixHeader, Method, MethodConfig, TableGame,
};
use fidam_core::oracle::{integrated_gradients, sii_bruteforce, stii_bruteforce, stii_over_orderings, RandomNet};
use fidam_core::removal::{BaselineKind, BaselineSpec, OutputMode, StaticBaseline, ValueFunction};
use fidam_core::rng;
use proptest::prelude::*;
use rand::Rng as _;

fn mask_of(s: &[usize]) -> u32 {
    s.iter().fold(0, |m, &i| m | 1 << i)
}

fn random_game(n: usize, seed: u64) -> TableGame {
    let mut r = rng::stream(seed, 0);
    let table = (0..1u32 << n).map(|_| r.gen_range(-1.0..1.0)).collect();
    TableGame::new(n, table).unwrap()
}

fn additive_game(c: &[f64]) -> TableGame {
    TableGame::from_fn(c.len(), |m| (0..c.len()).filter(|&i| m >> i & 1 == 1).map(|i| c[i]).sum())
}

fn exact() -> MethodConfig {
    MethodConfig { coalition_mode: CoalitionMode::Exact, ..MethodConfig::default() }
}

#[test]
fn exact_indices_match_bruteforce_on_random_games() {
    let mut worst: f64 = 0.0;
    for t in 0..50u64 {
        let n = 2 + (t as usize % 9);
        let g = random_game(n, 100 + t);
        let v = |s: &[usize]| g.table[mask_of(s) as usize];
        let s = sii_matrix(&g, 0, &exact()).unwrap();
        let st = stii_matrix(&g, 0, &exact()).unwrap();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    worst = worst.max((s.get(i, j) - sii_bruteforce(v, n, i, j)).abs());
                    worst = worst.max((st.get(i, j) - stii_bruteforce(v, n, i, j)).abs());
                }
            }
        }
    }
    assert!(worst <= 1e-9, "max deviation {worst:e}");
}

#[test]
fn stii_kernel_equals_average_over_orderings() {
    for n in 2..=6 {
        let g = random_game(n, 7 + n as u64);
        let v = |s: &[usize]| g.table[mask_of(s) as usize];
        let m = stii_matrix(&g, 0, &exact()).unwrap();
        for i in 0..n {
            for j in i + 1..n {
                assert!((m.get(i, j) - stii_over_orderings(v, n, i, j)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn single_pair_entry_points_agree_with_matrices() {
    let g = random_game(6, 11);
    let m = sii_matrix(&g, 0, &exact()).unwrap();
    let st = stii_matrix(&g, 0, &exact()).unwrap();
    assert!((sii(&g, 1, 4, 0, &exact()).unwrap() - m.get(1, 4)).abs() < 1e-12);
    assert!((stii(&g, 4, 1, 0, &exact()).unwrap() - st.get(1, 4)).abs() < 1e-12);
    assert!(sii(&g, 2, 2, 0, &exact()).is_err());
}

#[test]
fn two_feature_sii_is_the_mixed_difference() {
    // v(S) = prod of a_i over S, v(∅) = 1.
    let a = [2.0, -3.0];
    let g = TableGame::from_fn(2, |m| (0..2).filter(|&i| m >> i & 1 == 1).map(|i| a[i]).product());
    let expect = a[0] * a[1] - a[0] - a[1] + 1.0;
    assert!((sii_matrix(&g, 0, &exact()).unwrap().get(0, 1) - expect).abs() < 1e-15);
    assert!((stii_matrix(&g, 0, &exact()).unwrap().get(0, 1) - expect).abs() < 1e-15);
}

#[test]
fn stii_efficiency_on_small_games() {
    for n in 1..=6 {
        let g = random_game(n, 40 + n as u64);
        if n < 2 {
            continue;
        }
        let m = stii_matrix(&g, 0, &exact()).unwrap();
        let mut total = 0.0;
        for i in 0..n {
            total += m.get(i, i);
            for j in i + 1..n {
                total += m.get(i, j);
            }
        }
        let full = g.table[(1 << n) - 1] - g.table[0];
        assert!((total - full).abs() < 1e-12, "n={n}: {total} vs {full}");
    }
}

#[test]
fn sampled_sii_converges_with_more_permutations() {
    let n = 10;
    // Structured game: pairwise products plus a little noise.
    let mut r = rng::stream(5, 1);
    let w: Vec<f64> = (0..n * n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let g = TableGame::from_fn(n, |m| {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                if m >> i & 1 == 1 && m >> j & 1 == 1 {
                    s += w[i * n + j];
                }
            }
        }
        s + ((m as f64) * 0.37).sin() * 0.5
    });
    let truth = sii_matrix(&g, 0, &exact()).unwrap();
    let mut errors = Vec::new();
    for k in [10, 100, 1000] {
        let cfg = MethodConfig { coalition_mode: CoalitionMode::Sampled, permutations: k, ..MethodConfig::default() };
        let est = sii_matrix(&g, 3, &cfg).unwrap();
        let mut mae = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                mae += (est.get(i, j) - truth.get(i, j)).abs();
            }
        }
        errors.push(mae / 45.0);
    }
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    let cfg = MethodConfig { coalition_mode: CoalitionMode::Sampled, permutations: 1000, ..MethodConfig::default() };
    let est = stii_matrix(&g, 3, &cfg).unwrap();
    let truth = stii_matrix(&g, 0, &exact()).unwrap();
    assert!((0..n).all(|i| (est.get(i, i) - truth.get(i, i)).abs() < 1e-12));
    assert!((est.get(0, 1) - truth.get(0, 1)).abs() < 0.1);
}

#[test]
fn exact_mode_refuses_long_inputs() {
    let g = random_game(15, 1);
    let err = sii_matrix(&g, 0, &exact()).unwrap_err();
    assert!(matches!(err, Error::ExactCap { n: 15, cap: 14 }));
    let auto = MethodConfig { permutations: 2, ..MethodConfig::default() };
    assert!(sii_matrix(&g, 0, &auto).is_ok());
}

#[test]
fn additive_games_have_null_interactions() {
    let c = [0.5, -1.0, 2.0, 0.25, 3.0];
    let g = additive_game(&c);
    let ga = group_ablation(&g).unwrap();
    let s = sii_matrix(&g, 0, &exact()).unwrap();
    let st = stii_matrix(&g, 0, &exact()).unwrap();
    for i in 0..5 {
        assert!((ga.get(i, i) - c[i]).abs() < 1e-12);
        assert!((st.get(i, i) - c[i]).abs() < 1e-12);
        for j in 0..5 {
            if i != j {
                assert!((ga.get(i, j) - (c[i] + c[j])).abs() < 1e-12);
                assert!(s.get(i, j).abs() <= 1e-8);
                assert!(st.get(i, j).abs() <= 1e-8);
            }
        }
    }
    let (_, det) = archipelago_with(&g, &MethodConfig::default()).unwrap();
    assert!(det.sets.is_empty());
    assert!(det.strengths.iter().all(|&w| w < 1e-12));
}

#[test]
fn constant_game_gives_zero_ablation() {
    let g = TableGame::from_fn(4, |_| 1.5);
    assert!(group_ablation(&g).unwrap().scores.iter().all(|&v| v == 0.0));
}

#[test]
fn archipelago_finds_a_bivariate_dependency() {
    // v depends on positions 0 and 1 jointly and on 3 additively.
    let g = TableGame::from_fn(6, |m| {
        let (a, b) = (m & 1 == 1, m & 2 == 2);
        let joint = if a && b { 2.0 } else { 0.0 };
        joint + if m & 8 == 8 { 0.7 } else { 0.0 }
    });
    let (m, det) = archipelago_with(&g, &MethodConfig::default()).unwrap();
    assert!(det.sets.iter().any(|s| s.contains(&0) && s.contains(&1)));
    assert_eq!(m.get(0, 1), 2.0);
    for j in 2..6 {
        assert!(m.get(0, j) < m.get(0, 1));
    }
    assert!(!m.diagonal_defined);
}

fn relabel(g: &TableGame, perm: &[usize]) -> TableGame {
    // Position i of the original game becomes position perm[i].
    let n = g.n;
    TableGame::from_fn(n, |m| {
        let orig = (0..n).filter(|&i| m >> perm[i] & 1 == 1).fold(0u32, |a, i| a | 1 << i);
        g.table[orig as usize]
    })
}

#[test]
fn coalition_methods_are_permutation_equivariant() {
    let g = random_game(6, 77);
    let perm = [3, 0, 5, 1, 4, 2];
    let h = relabel(&g, &perm);
    let cfg = exact();
    let pairs: Vec<(InteractionMatrix, InteractionMatrix)> = vec![
        (group_ablation(&g).unwrap(), group_ablation(&h).unwrap()),
        (sii_matrix(&g, 0, &cfg).unwrap(), sii_matrix(&h, 0, &cfg).unwrap()),
        (stii_matrix(&g, 0, &cfg).unwrap(), stii_matrix(&h, 0, &cfg).unwrap()),
    ];
    for (a, b) in pairs {
        let p = a.permuted(&perm);
        for (x, y) in p.scores.iter().zip(&b.scores) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn symmetric_methods_are_symmetric(seed in any::<u64>(), n in 2usize..9) {
        let g = random_game(n, seed);
        for m in [group_ablation(&g).unwrap(), sii_matrix(&g, 0, &exact()).unwrap(), stii_matrix(&g, 0, &exact()).unwrap()] {
            prop_assert!(m.max_asymmetry() <= 1e-8);
        }
    }

    #[test]
    fn hessians_of_random_nets_are_symmetric(seed in any::<u64>()) {
        let mut r = rng::stream(seed, 0);
        let net = RandomNet::new(&mut r, 4, 3, 5);
        let x = net.input(&mut r);
        for agg in [HessianAggregation::SumThenSquare, HessianAggregation::SumOfSquares] {
            for times_input in [false, true] {
                let s = hessian_scores(|t: &mut Tape<Dual>, v: Var| net.build(t, v), &x, times_input, agg).unwrap();
                let m = InteractionMatrix::new(4, s, Method::Hessian, None).unwrap();
                prop_assert!(m.max_asymmetry() <= 1e-8);
            }
        }
    }
}

// f = (w·E_0)(u·E_1) + a nonlinear term in row 2 only.
fn bilinear(t: &mut Tape<Dual>, e: Var, w: &[f64], u: &[f64]) -> Result<Var> {
    let wv = t.constant(Tensor::vector(w.iter().map(|&v| Dual::new(v, 0.0)).collect()));
    let uv = t.constant(Tensor::vector(u.iter().map(|&v| Dual::new(v, 0.0)).collect()));
    let r0 = t.row(e, 0)?;
    let r1 = t.row(e, 1)?;
    let r2 = t.row(e, 2)?;
    let a = t.mul(wv, r0)?;
    let a = t.sum(a)?;
    let b = t.mul(uv, r1)?;
    let b = t.sum(b)?;
    let p = t.mul(a, b)?;
    let q = t.tanh(r2)?;
    let q = t.sum(q)?;
    t.add(p, q)
}

#[test]
fn hessian_of_bilinear_form_is_closed_form() {
    let (w, u) = ([0.5, -1.5], [2.0, 0.25]);
    let x = Tensor::matrix(3, 2, vec![0.3, -0.2, 1.1, 0.4, -0.7, 0.9]).unwrap();
    let f = |t: &mut Tape<Dual>, e: Var| bilinear(t, e, &w, &u);
    let s = hessian_scores(f, &x, false, HessianAggregation::SumThenSquare).unwrap();
    let expect = (w.iter().sum::<f64>() * u.iter().sum::<f64>()).powi(2);
    assert!((s[1] - expect).abs() < 1e-12);
    assert_eq!(s[2], 0.0);
    assert_eq!(s[5], 0.0);
    let s = hessian_scores(f, &x, true, HessianAggregation::SumThenSquare).unwrap();
    let wx: f64 = w.iter().zip(x.row(0)).map(|(a, b)| a * b).sum();
    let ux: f64 = u.iter().zip(x.row(1)).map(|(a, b)| a * b).sum();
    assert!((s[1] - (wx * ux).powi(2)).abs() < 1e-12);
    let s = hessian_scores(f, &x, false, HessianAggregation::SumOfSquares).unwrap();
    let expect: f64 = w.iter().flat_map(|a| u.iter().map(move |b| (a * b).powi(2))).sum();
    assert!((s[1] - expect).abs() < 1e-12);
}

fn bag_model(seed: u64) -> Model {
    let g = build_grammar("dyck2", &GrammarParams::default()).unwrap();
    let mut cfg = ModelConfig::for_grammar(&g, Arch::Bag);
    cfg.hidden_dim = 6;
    Model::init(cfg, &mut rng::stream(seed, 0)).unwrap()
}

#[test]
fn additive_model_has_null_second_order_interactions() {
    let model = bag_model(9);
    let x = [0, 2, 3, 1, 0, 1];
    let g = build_grammar("dyck2", &GrammarParams::default()).unwrap();
    let cfg = MethodConfig { ih_steps: 64, ..MethodConfig::default() };
    let h = hessian(&model, &x, OutputMode::LogitWellformed, &cfg).unwrap();
    let ih = integrated_hessians(&model, &x, &StaticBaseline::Zero, OutputMode::LogitWellformed, &cfg).unwrap();
    let vf = ValueFunction::new(&model, &g, BaselineSpec::new(BaselineKind::StaticZero));
    let s = attribute(Method::Sii, &vf, &x, 0, &cfg).unwrap().matrix;
    let st = attribute(Method::Stii, &vf, &x, 0, &cfg).unwrap().matrix;
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                assert!(h.get(i, j) <= 1e-8);
                assert!(ih.get(i, j).abs() <= 1e-4);
                assert!(s.get(i, j).abs() <= 1e-8);
                assert!(st.get(i, j).abs() <= 1e-8);
            }
        }
    }
    assert!(h.get(0, 0) > 0.0);
}

fn linear(t: &mut Tape<Dual>, e: Var) -> Result<Var> {
    let s = t.scale(e, 0.7)?;
    t.sum(s)
}

#[test]
fn linear_functions_give_zero_hessian_methods() {
    let x = Tensor::matrix(3, 2, vec![0.3, -0.2, 1.1, 0.4, -0.7, 0.9]).unwrap();
    let s = hessian_scores(linear, &x, true, HessianAggregation::SumThenSquare).unwrap();
    assert!(s.iter().all(|&v| v == 0.0));
    for steps in [1, 7, 64] {
        let ih = integrated_hessians_scores(linear, &x, &Tensor::zeros(&[3, 2]), steps).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(ih[i * 3 + j], 0.0);
                }
            }
        }
    }
    assert!(integrated_hessians_scores(linear, &x, &Tensor::zeros(&[3, 2]), 0).is_err());
}

#[test]
fn integrated_hessians_rows_sum_to_integrated_gradients() {
    for seed in 0..5u64 {
        let mut r = rng::stream(seed, 9);
        let net = RandomNet::new(&mut r, 4, 3, 6);
        let x = net.input(&mut r);
        let base = net.input(&mut r);
        let ih = integrated_hessians_scores(|t: &mut Tape<Dual>, v: Var| net.build(t, v), &x, &base, 128).unwrap();
        let grad = |p: &[f64]| -> Result<Vec<f64>> {
            let p = Tensor::matrix(4, 3, p.to_vec())?;
            let (_, g) = fidam_core::diff::value_and_gradient(|t, v| net.build(t, v[0]), &[p])?;
            Ok(g[0].data().to_vec())
        };
        let ig = integrated_gradients(grad, x.data(), base.data(), 3, 2000).unwrap();
        let total_ig: f64 = ig.iter().map(|v| v.abs()).sum();
        for i in 0..4 {
            let row: f64 = (0..4).map(|j| ih[i * 4 + j]).sum();
            assert!((row - ig[i]).abs() <= 0.02 * ig[i].abs().max(0.05 * total_ig), "seed {seed} row {i}: {row} vs {}", ig[i]);
        }
        // Completeness of the whole matrix.
        let diff = net.eval(&x) - net.eval(&base);
        assert!((ih.iter().sum::<f64>() - diff).abs() <= 0.02 * diff.abs().max(1e-2));
    }
}

#[test]
fn matrix_dump_round_trips() {
    let g = random_game(5, 2);
    let mut m = sii_matrix(&g, 0, &exact()).unwrap();
    m.baseline = Some(BaselineKind::IntervJoint);
    let mut h = MatrixHeader::for_matrix(&m, 42);
    h.extra.push(("config".into(), "abc123".into()));
    let text = write_matrix(&h, &m).unwrap();
    assert!(text.starts_with("# method=sii baseline=interv_joint seed=42 n=5 config=abc123\n"));
    let (h2, m2) = parse_matrix(&text, "mem").unwrap();
    assert_eq!(h2, h);
    assert_eq!(m2.scores, m.scores);
    assert!(!m2.diagonal_defined);
    assert!(parse_matrix("# method=sii baseline=none seed=1 n=2\n1 2\n", "mem").is_err());
    assert!(parse_matrix("method=sii\n", "mem").is_err());
}

#[test]
fn support_matrix_matches_the_table_layout() {
    use BaselineKind::*;
    for m in [Method::Archipelago, Method::IntegratedHessians] {
        for b in [IntervUnigram, IntervPositional, IntervJoint, Observational] {
            assert!(!m.supports(Some(b)));
        }
        for b in [StaticZero, StaticMap, ExpectedPos, ExpectedNeg] {
            assert!(m.supports(Some(b)));
        }
    }
    for m in [Method::Hessian, Method::HessianXInput] {
        assert!(m.supports(None));
        assert!(BaselineKind::ALL.iter().all(|&b| !m.supports(Some(b))));
    }
    for m in [Method::GroupAblation, Method::Sii, Method::Stii] {
        assert!(BaselineKind::ALL.iter().all(|&b| m.supports(Some(b))));
        assert!(!m.supports(None));
    }
    for m in Method::ALL {
        assert_eq!(Method::from_name(m.name()).unwrap(), m);
    }
}

#[test]
fn attribute_rejects_unsupported_cells() {
    let model = bag_model(1);
    let g = build_grammar("dyck2", &GrammarParams::default()).unwrap();
    let vf = ValueFunction::new(&model, &g, BaselineSpec::new(BaselineKind::IntervUnigram));
    let err = attribute(Method::Archipelago, &vf, &[0, 1], 0, &MethodConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)));
    let bad = MethodConfig { stii_order: 3, ..MethodConfig::default() };
    assert!(attribute(Method::Stii, &vf, &[0, 1], 0, &bad).is_err());
}

#[test]
fn gradient_methods_are_permutation_equivariant() {
    let mut r = rng::stream(12, 0);
    let net = RandomNet::new(&mut r, 4, 2, 5);
    let x = net.input(&mut r);
    let base = net.input(&mut r);
    let perm = [2, 0, 3, 1];
    let permute = |t: &Tensor| {
        let mut out = Tensor::zeros(t.shape());
        for i in 0..4 {
            out.data_mut()[perm[i] * 2..perm[i] * 2 + 2].copy_from_slice(t.row(i));
        }
        out
    };
    // g(X') = f(X) where row perm[i] of X' is row i of X.
    let g = |t: &mut Tape<Dual>, v: Var| {
        let rows = (0..4).map(|i| t.row(v, perm[i])).collect::<Result<Vec<_>>>()?;
        let back = t.stack_rows(&rows)?;
        net.build(t, back)
    };
    let f = |t: &mut Tape<Dual>, v: Var| net.build(t, v);
    let pairs = [
        (
            hessian_scores(f, &x, true, HessianAggregation::SumThenSquare).unwrap(),
            hessian_scores(g, &permute(&x), true, HessianAggregation::SumThenSquare).unwrap(),
        ),
        (
            integrated_hessians_scores(f, &x, &base, 16).unwrap(),
            integrated_hessians_scores(g, &permute(&x), &permute(&base), 16).unwrap(),
        ),
    ];
    for (a, b) in pairs {
        let a = InteractionMatrix::new(4, a, Method::Hessian, None).unwrap().permuted(&perm);
        for (p, q) in a.scores.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-10 * p.abs().max(1.0));
        }
    }
}
