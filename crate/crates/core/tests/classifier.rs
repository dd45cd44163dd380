use fidam_core::classifier::{
    accuracy, fit, load_checkpoint, save_checkpoint, train, Arch, Checkpoint, CorpusRef, Model, ModelConfig,
    TrainConfig,
};
use fidam_core::diff::{value_and_gradient, Tensor};
use fidam_core::error::Error;
use fidam_core::grammar::{
    add_negatives, build_grammar, make_split, sample_corpus, write_corpus, Corpus, CorpusItem, GrammarParams, Label,
    Split,
};
use fidam_core::oracle::central_gradient;
use fidam_core::rng;

fn small_config(arch: Arch) -> ModelConfig {
    let g = build_grammar("dyck2", &GrammarParams::default()).unwrap();
    let mut cfg = ModelConfig::for_grammar(&g, arch);
    cfg.hidden_dim = 8;
    cfg
}

fn toy_corpus() -> Corpus {
    let item = |tokens: Vec<usize>, label| CorpusItem { tokens, label, gold_pairs: vec![] };
    Corpus {
        positive: vec![item(vec![0, 2, 3, 1], Label::WellFormed)],
        negative: vec![item(vec![0, 2, 1, 1], Label::Corrupted)],
        split: Some(Split { train: vec![0, 1], test: vec![] }),
        seed: 0,
    }
}

#[test]
fn forward_equals_lookup_then_forward_bitwise() {
    for arch in [Arch::Lstm, Arch::Transformer] {
        let model = Model::init(small_config(arch), &mut rng::stream(3, 0)).unwrap();
        let g = build_grammar("dyck2", &GrammarParams::default()).unwrap();
        let corpus = add_negatives(&sample_corpus(&g, 50, 1).unwrap(), &g, 1).unwrap();
        for item in corpus.items() {
            let a = model.forward(&item.tokens).unwrap();
            let b = model.forward_from_embeddings(&model.embed(&item.tokens).unwrap()).unwrap();
            assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
            assert_eq!(a, model.forward(&item.tokens).unwrap());
        }
    }
}

#[test]
fn fast_lstm_matches_tape_path() {
    let model = Model::init(small_config(Arch::Lstm), &mut rng::stream(4, 0)).unwrap();
    let e = model.embed(&[0, 2, 3, 1, 0, 1]).unwrap();
    let fast = model.forward_from_embeddings(&e).unwrap();
    let mut tape = fidam_core::diff::Tape::<f64>::new();
    let x = tape.constant(e);
    let out = model.build_logits(&mut tape, x).unwrap();
    assert_eq!(tape.value(out).data(), &fast[..]);
}

#[test]
fn logit_gradient_wrt_embeddings_matches_finite_differences() {
    for arch in [Arch::Lstm, Arch::Transformer] {
        let model = Model::init(small_config(arch), &mut rng::stream(5, 0)).unwrap();
        let e = model.embed(&[0, 2, 3, 1]).unwrap();
        let (_, g) = value_and_gradient(
            |t, v| {
                let z = model.build_logits(t, v[0])?;
                t.index(z, 1)
            },
            &[e.clone()],
        )
        .unwrap();
        let fd = central_gradient(|p| model.forward_from_embeddings(p).unwrap()[1], &e, 1e-5);
        for (&a, &b) in g[0].data().iter().zip(fd.data()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()) + 1e-8, "{arch:?}: {a} vs {b}");
        }
    }
}

#[test]
fn errors_on_bad_inputs() {
    let model = Model::init(small_config(Arch::Lstm), &mut rng::stream(6, 0)).unwrap();
    assert!(matches!(model.forward(&[0, 9]), Err(Error::UnknownToken { token: 9, .. })));
    let wrong = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
    assert!(matches!(model.forward_from_embeddings(&wrong), Err(Error::EmbeddingWidth { got: 3, expected: 4 })));
}

#[test]
fn toy_corpus_converges_quickly_for_both_architectures() {
    for arch in [Arch::Lstm, Arch::Transformer] {
        let tc = TrainConfig { epochs: 300, retries: 0, ..TrainConfig::default() };
        let ck = train(&small_config(arch), &toy_corpus(), 11, &tc).unwrap();
        assert!(ck.is_converged());
        assert!(ck.training.epochs < 300);
        let items: Vec<_> = toy_corpus().items().cloned().collect();
        assert_eq!(accuracy(&ck.model, &items).unwrap(), 1.0);
    }
}

#[test]
fn training_is_reproducible() {
    let tc = TrainConfig { epochs: 5, retries: 0, ..TrainConfig::default() };
    let a = fit(&small_config(Arch::Lstm), &toy_corpus(), 2, &tc).unwrap();
    let b = fit(&small_config(Arch::Lstm), &toy_corpus(), 2, &tc).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.training, b.training);
}

#[test]
fn non_convergence_is_reported_after_retries() {
    // Same tokens, both labels: unlearnable.
    let mut corpus = toy_corpus();
    corpus.negative[0].tokens = corpus.positive[0].tokens.clone();
    let tc = TrainConfig { epochs: 3, retries: 2, ..TrainConfig::default() };
    let err = train(&small_config(Arch::Lstm), &corpus, 1, &tc).unwrap_err();
    assert!(matches!(err, Error::NonConvergence { attempts: 3, .. }));
    let ck = fit(&small_config(Arch::Lstm), &corpus, 1, &tc).unwrap();
    assert!(!ck.is_converged());
    assert!(matches!(ck.ensure_converged(), Err(Error::NotConverged { .. })));
}

#[test]
fn retried_checkpoints_round_trip() {
    let mut corpus = toy_corpus();
    corpus.negative[0].tokens = corpus.positive[0].tokens.clone();
    let tc = TrainConfig { epochs: 1, retries: 3, ..TrainConfig::default() };
    let ck = fit(&small_config(Arch::Lstm), &corpus, u64::MAX >> 1, &tc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("retried.ckpt");
    save_checkpoint(&path, &ck).unwrap();
    assert_eq!(load_checkpoint(&path, None).unwrap().training, ck.training);
}

#[test]
fn accuracy_properties() {
    let model = Model::init(small_config(Arch::Lstm), &mut rng::stream(8, 0)).unwrap();
    let g = build_grammar("dyck2", &GrammarParams::default()).unwrap();
    let corpus = add_negatives(&sample_corpus(&g, 30, 2).unwrap(), &g, 2).unwrap();
    let items: Vec<CorpusItem> = corpus.items().cloned().collect();
    assert!(matches!(accuracy(&model, &[]), Err(Error::EmptyCorpus)));

    // Labels set to the model's own predictions, then flipped.
    let agree: Vec<CorpusItem> = items
        .iter()
        .map(|it| CorpusItem {
            label: Label::from_class(model.predict(&it.tokens).unwrap()).unwrap(),
            ..it.clone()
        })
        .collect();
    let flipped: Vec<CorpusItem> = agree
        .iter()
        .map(|it| CorpusItem { label: Label::from_class(1 - it.label.class()).unwrap(), ..it.clone() })
        .collect();
    assert_eq!(accuracy(&model, &agree).unwrap(), 1.0);
    assert_eq!(accuracy(&model, &flipped).unwrap(), 0.0);

    let mut shuffled = items.clone();
    shuffled.reverse();
    assert_eq!(accuracy(&model, &items).unwrap(), accuracy(&model, &shuffled).unwrap());
}

#[test]
fn converged_dyck_model_classifies_examples() {
    let g = build_grammar("dyck2", &GrammarParams::default()).unwrap();
    let corpus = add_negatives(&sample_corpus(&g, 1000, 3).unwrap(), &g, 3).unwrap();
    let corpus = make_split(&corpus, 0.8, 3).unwrap();
    let ck = train(&ModelConfig::for_grammar(&g, Arch::Lstm), &corpus, 3, &TrainConfig::default()).unwrap();
    assert_eq!(ck.training.train_accuracy, 1.0);
    assert_eq!(ck.training.test_accuracy, 1.0);
    assert_eq!(ck.model.predict(&g.tokenize("( [ ] )").unwrap()).unwrap(), 1);
    assert_eq!(ck.model.predict(&g.tokenize("( ]").unwrap()).unwrap(), 0);
}

#[test]
fn checkpoint_round_trip_and_integrity() {
    let dir = tempfile::tempdir().unwrap();
    let g = build_grammar("dyck2", &GrammarParams::default()).unwrap();
    let corpus = toy_corpus();
    let corpus_path = dir.path().join("corpus.tsv");
    write_corpus(&corpus_path, &g, &corpus).unwrap();

    let tc = TrainConfig { epochs: 300, retries: 0, ..TrainConfig::default() };
    let mut ck: Checkpoint = train(&small_config(Arch::Lstm), &corpus, 1, &tc).unwrap();
    ck.corpus = Some(CorpusRef {
        path: "corpus.tsv".into(),
        sha256: fidam_core::classifier::file_sha256(&corpus_path).unwrap(),
    });
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path, Some(&g)).unwrap();
    assert_eq!(back, ck);

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&path, &bytes).unwrap();
    match load_checkpoint(&path, Some(&g)) {
        Err(Error::Integrity { path: p, msg }) => {
            assert_eq!(p, path);
            assert!(msg.contains("checksum"));
        }
        other => panic!("expected integrity error, got {other:?}"),
    }

    // A converged flag the parameters do not back up.
    let mut lying = ck.clone();
    let zeroed: Vec<Tensor> = lying.model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    lying.model = Model::new(lying.model.config().clone(), zeroed).unwrap();
    save_checkpoint(&path, &lying).unwrap();
    assert!(matches!(load_checkpoint(&path, Some(&g)), Err(Error::Integrity { .. })));
}
