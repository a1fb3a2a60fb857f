use super::*;
use crate::datapipe::{formalize_split, synthesize_dataset, Split, SynthConfig};
use crate::model::tests::tiny_config;
use crate::model::ModelConfig;
use crate::numcore::{grad_check, GradCheckOptions, ParamGroup, Tensor};
use crate::textcodec::Vocabulary;
use crate::unilabel::{unify_manifest, BowCosine, CompletionOptions};

/// Synthetic samples sized for `tiny_config`, with the vocabulary resized
/// to match.
fn tiny_data(n: usize, seed: u64) -> (ModelConfig, Vec<FormalizedInput>) {
    let cfg = SynthConfig {
        msa: [n / 2, 0, 0],
        erc: [n - n / 2, 0, 0],
        filler_words: 6,
        text_len: (2, 3),
        acoustic_dim: 3,
        visual_dim: 2,
        frames: (2, 4),
        dialogue_len: 2,
        ..SynthConfig::default()
    };
    let m = synthesize_dataset(&cfg, seed).unwrap();
    let opts = CompletionOptions {
        widen_empty_pool: true,
        ..CompletionOptions::default()
    };
    let (m, _) = unify_manifest(&m, &BowCosine, opts).unwrap();
    let vocab = Vocabulary::build(&m.corpus()).unwrap();
    let mut c = tiny_config();
    c.vocab_size = vocab.len();
    c.max_len = 24;
    let inputs = formalize_split(&m, Some(Split::Train), &vocab).unwrap();
    (c, inputs)
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: [1e-2, 1e-2, 1e-2],
        batch_size: 3,
        epochs,
        ..TrainConfig::default()
    }
}

fn batch_of(inputs: &[FormalizedInput], k: usize) -> Batch {
    Batch::from_inputs(&inputs.iter().take(k).collect::<Vec<_>>()).unwrap()
}

#[test]
fn lr_groups() {
    assert_eq!(LrGroup::of(ParamGroup::Attention), LrGroup::Backbone);
    assert_eq!(LrGroup::of(ParamGroup::Head), LrGroup::Backbone);
    assert_eq!(LrGroup::of(ParamGroup::Lstm), LrGroup::Main);
    assert_eq!(LrGroup::of(ParamGroup::ConvProjection), LrGroup::Main);
    assert_eq!(LrGroup::of(ParamGroup::Fusion), LrGroup::Fusion);
}

#[test]
fn optimizer_steps_match_hand_updates() {
    let mut store = ParamStore::new();
    store
        .insert(
            "a",
            ParamGroup::Attention,
            Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap(),
        )
        .unwrap();
    store
        .insert(
            "f",
            ParamGroup::Fusion,
            Tensor::matrix(1, 1, vec![0.5]).unwrap(),
        )
        .unwrap();
    let grads = vec![
        Tensor::matrix(1, 2, vec![0.2, -4.0]).unwrap(),
        Tensor::matrix(1, 1, vec![1.0]).unwrap(),
    ];
    let mut c = TrainConfig {
        optimizer: OptimizerKind::Sgd,
        lr: [0.1, 0.0, 0.01],
        ..TrainConfig::default()
    };
    let mut s = store.clone();
    Optimizer::new(&c, &s).step(&mut s, &grads);
    assert_eq!(
        s.value(crate::numcore::ParamId(0)).data(),
        &[1.0 - 0.1 * 0.2, -1.0 + 0.1 * 4.0]
    );
    assert_eq!(s.value(crate::numcore::ParamId(1)).data(), &[0.5 - 0.01]);

    // the first bias-corrected Adam step has magnitude lr per coordinate
    c.optimizer = OptimizerKind::Adam;
    let mut s = store.clone();
    Optimizer::new(&c, &s).step(&mut s, &grads);
    let a = s.value(crate::numcore::ParamId(0)).data();
    assert!((a[0] - 0.9).abs() < 1e-7 && (a[1] + 0.9).abs() < 1e-7);

    c.grad_clip = 1.0;
    c.optimizer = OptimizerKind::Sgd;
    let mut s = store.clone();
    Optimizer::new(&c, &s).step(&mut s, &grads);
    let norm = (0.04f64 + 16.0 + 1.0).sqrt();
    assert!(
        (s.value(crate::numcore::ParamId(0)).data()[1] - (-1.0 + 0.1 * 4.0 / norm)).abs() < 1e-15
    );
}

#[test]
fn loss_terms_follow_switches() {
    let (c, inputs) = tiny_data(6, 1);
    let model = Model::new(c, 3).unwrap();
    let b = batch_of(&inputs, 3);

    let mut g = Graph::new();
    let l = batch_loss(
        &mut g,
        &model,
        &model.params,
        &b,
        0.5,
        0.5,
        1.0,
        DropModality::None,
    )
    .unwrap();
    assert_eq!((l.ta.len(), l.tv.len()), (1, 1));
    let bd = l.breakdown(&g, 0.5, 0.5).unwrap();
    assert_eq!(bd.total.to_bits(), g.scalar(l.total).to_bits());

    let mut g = Graph::new();
    let l = batch_loss(
        &mut g,
        &model,
        &model.params,
        &b,
        0.0,
        0.0,
        1.0,
        DropModality::None,
    )
    .unwrap();
    assert_eq!(g.scalar(l.total).to_bits(), g.scalar(l.task).to_bits());

    let mut g = Graph::new();
    let l = batch_loss(
        &mut g,
        &model,
        &model.params,
        &b,
        0.5,
        0.5,
        1.0,
        DropModality::A,
    )
    .unwrap();
    assert_eq!((l.ta.len(), l.tv.len()), (0, 1));

    let single = batch_of(&inputs, 1);
    let mut g = Graph::new();
    let l = batch_loss(
        &mut g,
        &model,
        &model.params,
        &single,
        0.5,
        0.5,
        1.0,
        DropModality::None,
    )
    .unwrap();
    assert!(l.ta.is_empty() && l.tv.is_empty());
}

#[test]
fn dropping_zeroes_features() {
    let (_, inputs) = tiny_data(4, 2);
    let mut b = batch_of(&inputs, 2);
    apply_drop(&mut b, DropModality::V);
    assert!(b.visual.iter().all(|f| f.data().iter().all(|&x| x == 0.0)));
    assert!(b
        .acoustic
        .iter()
        .any(|f| f.data().iter().any(|&x| x != 0.0)));
    assert_eq!("av".parse::<DropModality>().unwrap(), DropModality::Av);
    assert!("x".parse::<DropModality>().is_err());
}

#[test]
fn full_batch_loss_gradients_match_finite_differences() {
    let (c, inputs) = tiny_data(3, 4);
    let model = Model::new(c, 5).unwrap();
    let b = batch_of(&inputs, 3);
    let report = grad_check(
        &model.params,
        |g, s| Ok(batch_loss(g, &model, s, &b, 0.5, 0.5, 1.0, DropModality::None)?.total),
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.worst);
    for group in ParamGroup::ALL {
        assert!(
            report.group(group).is_some_and(|s| s.coords > 0),
            "{group} not covered"
        );
    }
}

#[test]
fn zero_epochs_keep_the_initialization() {
    let (c, inputs) = tiny_data(6, 6);
    let mut model = Model::new(c.clone(), 7).unwrap();
    let out = train(&mut model, &inputs, &[], &cfg(0), None).unwrap();
    assert_eq!(out.steps, 0);
    assert_eq!(model, Model::new(c, 7).unwrap());
}

#[test]
fn training_is_deterministic_and_lowers_the_loss() {
    let (c, inputs) = tiny_data(6, 8);
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let mut model = Model::new(c.clone(), 9).unwrap();
        let path = dir.path().join(name);
        let out = train(&mut model, &inputs, &inputs, &cfg(8), Some(&path)).unwrap();
        (model, out, std::fs::read(path).unwrap())
    };
    let (m1, o1, log1) = run("a.tsv");
    let (m2, _, log2) = run("b.tsv");
    assert_eq!(m1, m2);
    assert_eq!(log1, log2);
    assert_eq!(o1.steps, 16);
    assert_eq!(String::from_utf8(log1).unwrap().lines().count(), 17);
    assert!(o1.curve.last().unwrap().total < o1.curve[0].total);
    assert_eq!(o1.validation.len(), 1);
    assert!(o1.best.is_some());
}

#[test]
fn non_finite_loss_aborts_with_batch_ids() {
    let (c, inputs) = tiny_data(4, 10);
    let mut model = Model::new(c, 11).unwrap();
    let id = model.params.id("head.b").unwrap();
    model.params.value_mut(id).data_mut()[0] = f64::INFINITY;
    let err = train(&mut model, &inputs, &[], &cfg(1), None).unwrap_err();
    match err {
        Error::Training { step, batch, .. } => {
            assert_eq!(step, 0);
            assert!(!batch.is_empty() && inputs.iter().any(|x| batch.contains(&x.id)));
        }
        e => panic!("unexpected {e}"),
    }
}
