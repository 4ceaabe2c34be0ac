use stepgait_core::checkpoint::{decode_classifier, encode_classifier, encode_generator};
use stepgait_core::classifier::{Classifier, ClassifierConfig, Head};
use stepgait_core::eval::{guided_backprop_saliency, plain_saliency, Axis};
use stepgait_core::io::{decode_batch, encode_batch};
use stepgait_core::params::Mode;
use stepgait_core::rng::{normal_vec, stream, Stream};
use stepgait_core::skeleton::{default_topology, view_normalize};
use stepgait_core::stepgen::{Generator, GeneratorConfig, LATENT_DIM};
use stepgait_core::synth::{synth_dataset, SynthOptions};
use stepgait_core::training::{
    adam_step, train_classifier, train_generator, AdamParams, AdamState, TrainConfig,
};
use stepgait_core::{Emotion, GaitSequence, Tensor};

const FRAMES: usize = 16;

fn data(n_per_class: usize, seed: u64) -> Vec<GaitSequence> {
    let topo = default_topology();
    let opts = SynthOptions {
        frames: FRAMES,
        ..SynthOptions::default()
    };
    synth_dataset(n_per_class, &opts, seed)
        .unwrap()
        .iter()
        .map(|g| view_normalize(g, &topo).unwrap())
        .collect()
}

fn small_cfg(epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::classifier_default();
    cfg.epochs = epochs;
    cfg.decay_epochs = vec![];
    cfg.batch_size = 4;
    cfg.lr = 0.01;
    cfg
}

fn gen_cfg() -> GeneratorConfig {
    GeneratorConfig {
        frames: FRAMES,
        ..GeneratorConfig::default()
    }
}

#[test]
fn one_adam_step_decreases_generator_loss() {
    let topo = default_topology();
    let gait = &data(1, 3)[2];
    let gen = Generator::new(gen_cfg(), &topo, 4).unwrap();
    let x = gait.positions().reshape(&[1, 3, FRAMES, 16]).unwrap();
    let labels = [gait.label().unwrap()];
    let noise = Tensor::new(
        vec![1, LATENT_DIM],
        normal_vec(&mut stream(5, Stream::Noise), LATENT_DIM),
    )
    .unwrap();
    let w = TrainConfig::generator_default().loss_weights();
    let loss = |g: &Generator| {
        let mut gg = g
            .training_graph(&x, &labels, &noise, &w, Mode::Train)
            .unwrap();
        let l = gg
            .graph
            .forward(gg.total, &g.store().bindings())
            .unwrap()
            .item();
        (l, gg)
    };
    let (before, gg) = loss(&gen);
    let grads = gg
        .graph
        .backward(gg.total, &Tensor::full(&[], 1.0))
        .unwrap();
    let mut stepped = gen.clone();
    let hp = AdamParams {
        lr: 1e-4,
        beta1: 0.9,
        beta2: 0.999,
        weight_decay: 0.0,
    };
    adam_step(stepped.store_mut(), &grads, &mut AdamState::new(), hp).unwrap();
    let (after, _) = loss(&stepped);
    assert!(after < before, "{} !< {}", after, before);
}

#[test]
fn generator_training_is_bit_reproducible() {
    let topo = default_topology();
    let gaits = data(2, 6);
    let mut cfg = TrainConfig::generator_default();
    cfg.epochs = 2;
    cfg.decay_epochs = vec![1];
    let a = train_generator(&gaits, &cfg, gen_cfg(), &topo).unwrap();
    let b = train_generator(&gaits, &cfg, gen_cfg(), &topo).unwrap();
    assert_eq!(
        encode_generator(&a.generator, &topo).unwrap(),
        encode_generator(&b.generator, &topo).unwrap()
    );
    assert_eq!(a.history.len(), 2);
    assert!(a.history.iter().all(|h| h.loss_total.is_finite()));
}

#[test]
fn classifier_training_is_reproducible_and_keeps_augment_in_train() {
    let topo = default_topology();
    let train = data(3, 7);
    let val = data(1, 8);
    let augment = data(1, 9);
    let cfg = small_cfg(2);
    let run = || {
        train_classifier(
            &train,
            &val,
            &augment,
            &cfg,
            ClassifierConfig::default(),
            &topo,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(
        encode_classifier(&a.classifier).unwrap(),
        encode_classifier(&b.classifier).unwrap()
    );
    assert_eq!(a.train_size, train.len() + augment.len());
    assert_eq!(a.history.len(), 2);
    for h in &a.history {
        assert!((0.0..=1.0).contains(&h.val_accuracy));
    }
}

#[test]
fn eval_forward_is_batch_independent() {
    let gaits = data(2, 10);
    let mut clf = Classifier::new(ClassifierConfig::default(), &default_topology(), 11).unwrap();
    let refs: Vec<&GaitSequence> = gaits.iter().collect();
    let vectors = stepgait_core::affective::extract_batch(&gaits, clf.topology()).unwrap();
    clf.fit_affect_normalization(&vectors).unwrap();
    let batch = clf.logits(&refs).unwrap();
    for (g, row) in gaits.iter().zip(&batch) {
        let alone = clf.logits(&[g]).unwrap()[0];
        for (a, b) in alone.iter().zip(row) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn heads_share_the_trunk() {
    let gaits = data(1, 12);
    let g = &gaits[0];
    let mut clf = Classifier::new(ClassifierConfig::default(), &default_topology(), 13).unwrap();
    let vectors = stepgait_core::affective::extract_batch(&gaits, clf.topology()).unwrap();
    clf.fit_affect_normalization(&vectors).unwrap();
    let (b0, h0) = (
        clf.logits_with(&[g], Head::Baseline).unwrap(),
        clf.logits_with(&[g], Head::Hybrid).unwrap(),
    );
    for v in clf
        .store_mut()
        .param_mut("clf.l1.spatial")
        .unwrap()
        .data_mut()
    {
        *v *= 1.5;
    }
    let (b1, h1) = (
        clf.logits_with(&[g], Head::Baseline).unwrap(),
        clf.logits_with(&[g], Head::Hybrid).unwrap(),
    );
    assert_ne!(b0, b1);
    assert_ne!(h0, h1);
}

#[test]
fn saliency_maps() {
    let topo = default_topology();
    let train = data(2, 14);
    let run = train_classifier(
        &train,
        &train,
        &[],
        &small_cfg(2),
        ClassifierConfig::default(),
        &topo,
    )
    .unwrap();
    let clf = run.classifier;
    let g = &train[0];
    let guided = guided_backprop_saliency(&clf, g, Emotion::Happy, Axis::Y).unwrap();
    let plain = plain_saliency(&clf, g, Emotion::Happy, Axis::Y).unwrap();
    assert_eq!(guided.values.shape(), &[FRAMES, 16]);
    assert!(guided.values.data().iter().all(|&v| v >= 0.0));
    assert!(plain.values.data().iter().all(|&v| v >= 0.0));
    assert_ne!(guided.values, plain.values);

    let mut zero = clf.clone();
    zero.store_mut().zero_params();
    let z = guided_backprop_saliency(&zero, g, Emotion::Sad, Axis::X).unwrap();
    assert!(z.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn synthetic_gaits_round_trip_through_formats() {
    let topo = default_topology();
    let gaits = data(1, 15);
    let back = decode_batch(&encode_batch(&gaits, &topo).unwrap(), &topo).unwrap();
    assert_eq!(back, gaits);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    stepgait_core::io::save_gait(&gaits[1], &path).unwrap();
    assert_eq!(stepgait_core::io::load_gait(&path).unwrap(), gaits[1]);
    let clf = Classifier::new(ClassifierConfig::default(), &topo, 1).unwrap();
    let bytes = encode_classifier(&clf).unwrap();
    assert_eq!(decode_classifier(&bytes).unwrap().store(), clf.store());
}

#[test]
fn same_latent_different_label_gives_different_gait() {
    let topo = default_topology();
    let gaits = data(2, 16);
    let mut cfg = TrainConfig::generator_default();
    cfg.epochs = 2;
    cfg.decay_epochs = vec![];
    let gen = train_generator(&gaits, &cfg, gen_cfg(), &topo)
        .unwrap()
        .generator;
    let z = normal_vec(&mut stream(17, Stream::Noise), LATENT_DIM);
    let a = gen.decode(&z, Emotion::Happy).unwrap();
    let b = gen.decode(&z, Emotion::Sad).unwrap();
    let rms = (a
        .positions()
        .data()
        .iter()
        .zip(b.positions().data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.positions().len() as f64)
        .sqrt();
    assert!(rms > 0.0);
    assert_eq!(a.label(), Some(Emotion::Happy));
    assert_eq!(b.label(), Some(Emotion::Sad));
}

#[test]
fn hybrid_head_keeps_up_with_baseline() {
    let topo = default_topology();
    let mut totals = [0.0; 2];
    for seed in 0..5 {
        let split =
            stepgait_core::training::split_dataset(&data(10, 20 + seed), [0.7, 0.2, 0.1], seed)
                .unwrap();
        let mut cfg = small_cfg(4);
        cfg.seed = seed;
        for (k, head) in [Head::Baseline, Head::Hybrid].into_iter().enumerate() {
            let clf_cfg = ClassifierConfig {
                head,
                ..ClassifierConfig::default()
            };
            let run =
                train_classifier(&split.train, &split.val, &[], &cfg, clf_cfg, &topo).unwrap();
            totals[k] += stepgait_core::training::classifier_accuracy(&run.classifier, &split.test)
                .unwrap()
                / 5.0;
        }
    }
    assert!(
        totals[1] >= totals[0] - 0.02,
        "hybrid {} vs baseline {}",
        totals[1],
        totals[0]
    );
}
