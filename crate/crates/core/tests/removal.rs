use fidam_core::classifier::{Arch, Model, ModelConfig};
use fidam_core::diff::Tensor;
use fidam_core::grammar::{
    add_negatives, build_grammar, make_split, sample_corpus, Corpus, Grammar, GrammarParams, LanguagePool,
};
use fidam_core::interactions::{attribute, group_ablation, InteractionMatrix, Method, MethodConfig};
use fidam_core::removal::{
    draw_backgrounds, expected_attribution, observational_complete, Background, BaselineKind, BaselineSpec,
    FeatureSubset, Game, OutputMode, StaticBaseline, ValueFunction,
};
use fidam_core::rng;

struct Fixture {
    g: Grammar,
    model: Model,
    corpus: Corpus,
    bg: Background,
    pool: LanguagePool,
}

fn fixture(lang: &str, arch: Arch) -> Fixture {
    let g = build_grammar(lang, &GrammarParams::default()).unwrap();
    let corpus = make_split(&add_negatives(&sample_corpus(&g, 300, 5).unwrap(), &g, 5).unwrap(), 0.8, 5).unwrap();
    let mut cfg = ModelConfig::for_grammar(&g, arch);
    cfg.hidden_dim = 8;
    let model = Model::init(cfg, &mut rng::stream(17, 0)).unwrap();
    let bg = Background::from_corpus(&corpus, g.alphabet.len()).unwrap();
    let pool = LanguagePool::for_grammar(&g, 100_000).unwrap();
    Fixture { g, model, corpus, bg, pool }
}

impl Fixture {
    fn vf(&self, kind: BaselineKind) -> ValueFunction<'_> {
        ValueFunction::new(&self.model, &self.g, BaselineSpec::new(kind).with_samples(20))
            .with_background(&self.bg)
            .with_pool(&self.pool)
    }

    fn x(&self, len: usize) -> Vec<usize> {
        self.corpus.positive.iter().find(|i| i.tokens.len() == len).expect("item of that length").tokens.clone()
    }
}

#[test]
fn full_subset_ignores_the_baseline() {
    for arch in [Arch::Lstm, Arch::Transformer] {
        let f = fixture("dyck2", arch);
        let x = f.x(6);
        let plain = OutputMode::LogitWellformed.apply(f.model.forward(&x).unwrap());
        for kind in BaselineKind::ALL.into_iter().filter(|k| !k.is_expected()) {
            let v = f.vf(kind).value(&x, FeatureSubset::full(6), 3).unwrap();
            assert_eq!(v.to_bits(), plain.to_bits(), "{arch:?} {kind:?}");
        }
    }
}

#[test]
fn empty_subset_with_zero_baseline_is_the_zero_matrix() {
    let f = fixture("dyck2", Arch::Lstm);
    let x = f.x(4);
    let v = f.vf(BaselineKind::StaticZero).value(&x, FeatureSubset::empty(4), 0).unwrap();
    let zero = Tensor::zeros(&[4, f.model.embedding_dim()]);
    assert_eq!(v, f.model.forward_from_embeddings(&zero).unwrap()[1]);
}

#[test]
fn static_map_substitutes_mapped_tokens() {
    let f = fixture("dyck2", Arch::Lstm);
    let x = f.g.tokenize("( )").unwrap();
    let s = FeatureSubset::from_positions(2, &[0]).unwrap();
    let v = f.vf(BaselineKind::StaticMap).value(&x, s, 0).unwrap();
    let manual = f.g.tokenize("( ]").unwrap();
    assert_eq!(v, f.model.forward(&manual).unwrap()[1]);
}

#[test]
fn zeroed_embedding_row_matches_zero_baseline() {
    let f = fixture("dyck2", Arch::Transformer);
    let x = f.x(6);
    let game = f.vf(BaselineKind::StaticZero).game(&x, 0).unwrap();
    let mut e = f.model.embed(&x).unwrap();
    let d = f.model.embedding_dim();
    e.data_mut()[2 * d..3 * d].fill(0.0);
    assert_eq!(game.value(0b111011).unwrap(), f.model.forward_from_embeddings(&e).unwrap()[1]);
}

#[test]
fn trie_evaluation_matches_direct_forwards() {
    let f = fixture("dyck2", Arch::Lstm);
    let x = f.x(8);
    for kind in [BaselineKind::StaticZero, BaselineKind::StaticMap, BaselineKind::IntervPositional] {
        let game = f.vf(kind).game(&x, 4).unwrap();
        let table = game.table().unwrap();
        for mask in [0u32, 5, 77, 200, 255] {
            let fresh = f.vf(kind).game(&x, 4).unwrap();
            assert_eq!(table[mask as usize], fresh.value(mask).unwrap());
        }
    }
    // Direct reconstruction for the static map.
    let game = f.vf(BaselineKind::StaticMap).game(&x, 0).unwrap();
    let t = f.g.map_tokens(&x).unwrap();
    for mask in [3u32, 90, 129] {
        let tokens: Vec<usize> = (0..8).map(|i| if mask >> i & 1 == 1 { x[i] } else { t[i] }).collect();
        let direct = f.model.forward(&tokens).unwrap()[1];
        assert!((game.value(mask).unwrap() - direct).abs() < 1e-12);
    }
}

#[test]
fn observational_completion_on_small_examples() {
    let f = fixture("dyck2", Arch::Lstm);
    let x = f.g.tokenize("( )").unwrap();
    let s = FeatureSubset::from_positions(2, &[0]).unwrap();
    for seed in 0..20 {
        assert_eq!(observational_complete(&f.pool, &x, s, seed).unwrap(), f.g.tokenize(")").unwrap());
    }
    assert!(observational_complete(&f.pool, &x, FeatureSubset::full(2), 0).unwrap().is_empty());

    let id = fixture("identity_rule", Arch::Lstm);
    let x = id.x(5);
    let s = FeatureSubset::from_positions(5, &[0]).unwrap();
    for seed in 0..20 {
        assert_eq!(observational_complete(&id.pool, &x, s, seed).unwrap()[0], x[0]);
    }
}

#[test]
fn observational_fillers_stay_in_the_language() {
    let f = fixture("dyck2", Arch::Lstm);
    let x = f.x(8);
    for mask in [0u32, 1, 0b1001, 0b1100_0011] {
        let s = FeatureSubset::new(mask, 8).unwrap();
        for seed in 0..10 {
            let fill = observational_complete(&f.pool, &x, s, seed).unwrap();
            let mut it = fill.into_iter();
            let full: Vec<usize> = (0..8).map(|i| if s.contains(i) { x[i] } else { it.next().unwrap() }).collect();
            assert!(f.g.accepts(&full));
        }
    }
}

#[test]
fn joint_fillers_are_training_strings() {
    let f = fixture("dyck2", Arch::Lstm);
    let x = f.x(6);
    let train: Vec<Vec<usize>> = f.corpus.train_items().unwrap().iter().map(|i| i.tokens.clone()).collect();
    let mut r = rng::stream(1, 2);
    let draws = f.bg.draw_strings(6, None, true, 50, &mut r).unwrap();
    assert!(draws.iter().all(|d| train.contains(d)));
    // With joint filling and S = ∅ every forward is on a training string.
    let game = f.vf(BaselineKind::IntervJoint).game(&x, 8).unwrap();
    let v = game.value(0).unwrap();
    assert!(v.is_finite());
    assert!(f.bg.draw_strings(99, None, true, 1, &mut r).is_err());
}

#[test]
fn interventional_variance_shrinks_with_samples() {
    let f = fixture("dyck2", Arch::Lstm);
    let x = f.x(8);
    let var = |samples: usize| {
        let vals: Vec<f64> = (0..60)
            .map(|seed| {
                let vf = ValueFunction::new(&f.model, &f.g, BaselineSpec::new(BaselineKind::IntervUnigram).with_samples(samples))
                    .with_background(&f.bg);
                vf.value(&x, FeatureSubset::new(0b1010_0101, 8).unwrap(), seed).unwrap()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
    };
    let (v4, v64) = (var(4), var(64));
    // O(1/samples): a 16× increase should cut the variance by roughly 16×.
    assert!(v64 < v4 / 6.0 && v64 > v4 / 40.0, "{v4} vs {v64}");
}

#[test]
fn value_function_errors() {
    let f = fixture("dyck2", Arch::Lstm);
    let x = f.x(4);
    let mut g = f.g.clone();
    g.static_map = None;
    let vf = ValueFunction::new(&f.model, &g, BaselineSpec::new(BaselineKind::StaticMap));
    assert!(vf.value(&x, FeatureSubset::empty(4), 0).is_err());
    let vf = ValueFunction::new(&f.model, &f.g, BaselineSpec::new(BaselineKind::IntervJoint));
    assert!(vf.value(&x, FeatureSubset::empty(4), 0).is_err(), "needs a background");
    let vf = f.vf(BaselineKind::IntervUnigram);
    assert!(vf.value(&x, FeatureSubset::empty(5), 0).is_err());
    assert!(FeatureSubset::new(0b10000, 4).is_err());
    let zero = ValueFunction::new(&f.model, &f.g, BaselineSpec::new(BaselineKind::IntervUnigram).with_samples(0))
        .with_background(&f.bg);
    assert!(zero.value(&x, FeatureSubset::empty(4), 0).is_err());
    assert!(f.vf(BaselineKind::ExpectedPos).game(&x, 0).is_err());
}

#[test]
fn value_is_deterministic_given_seed() {
    let f = fixture("dyck2", Arch::Lstm);
    let x = f.x(8);
    for kind in [BaselineKind::IntervJoint, BaselineKind::Observational, BaselineKind::IntervUnigram] {
        let a = f.vf(kind).game(&x, 5).unwrap().table().unwrap();
        let b = f.vf(kind).game(&x, 5).unwrap().table().unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn expected_attribution_averages_static_runs() {
    let f = fixture("dyck2", Arch::Lstm);
    let x = f.x(6);
    let cfg = MethodConfig::default();
    let run = |vf: &ValueFunction, b: &StaticBaseline| group_ablation(&Game::with_static(*vf, &x, b).unwrap());

    let mut spec = BaselineSpec::new(BaselineKind::ExpectedPos).with_samples(1);
    let vf = ValueFunction::new(&f.model, &f.g, spec).with_background(&f.bg);
    let draws = draw_backgrounds(&vf, &x, 3).unwrap();
    assert_eq!(draws.len(), 1);
    let one = expected_attribution(&vf, &x, 3, |b| run(&vf, b)).unwrap();
    let direct = run(&vf, &StaticBaseline::Tokens(draws[0].clone())).unwrap();
    assert_eq!(one.scores, direct.scores);

    spec.samples = 3;
    let vf = ValueFunction::new(&f.model, &f.g, spec).with_background(&f.bg);
    let draws = draw_backgrounds(&vf, &x, 3).unwrap();
    let positives: Vec<&Vec<usize>> = f.corpus.positive.iter().map(|i| &i.tokens).collect();
    assert!(draws.iter().all(|d| d.len() == 6 && positives.contains(&d)));
    let mats: Vec<InteractionMatrix> =
        draws.iter().map(|d| run(&vf, &StaticBaseline::Tokens(d.clone())).unwrap()).collect();
    let mean = expected_attribution(&vf, &x, 3, |b| run(&vf, b)).unwrap();
    for k in 0..36 {
        let hand = (mats[0].scores[k] + mats[1].scores[k] + mats[2].scores[k]) / 3.0;
        assert!((mean.scores[k] - hand).abs() < 1e-12);
    }
    assert_eq!(mean.baseline, Some(BaselineKind::ExpectedPos));
    // The dispatcher routes expected kinds through the same average.
    let a = attribute(Method::GroupAblation, &vf, &x, 9, &cfg).unwrap();
    let b = attribute(Method::GroupAblation, &vf, &x, 9, &cfg).unwrap();
    assert_eq!(a.matrix.scores, b.matrix.scores);

    let neg = ValueFunction::new(&f.model, &f.g, BaselineSpec::new(BaselineKind::ExpectedNeg).with_samples(4))
        .with_background(&f.bg);
    let negatives: Vec<&Vec<usize>> = f.corpus.negative.iter().map(|i| &i.tokens).collect();
    assert!(draw_backgrounds(&neg, &x, 1).unwrap().iter().all(|d| negatives.contains(&d)));
}
