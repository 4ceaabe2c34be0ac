//! Optimizer, learning-rate schedule, dataset splitting and training loops.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::affective::AffectiveVector;
use crate::autodiff::Gradients;
use crate::classifier::{Classifier, ClassifierConfig, Head};
use crate::error::{Error, Result};
use crate::gait::{Emotion, GaitSequence, NUM_CLASSES};
use crate::params::{update_running_stats, Mode, ParamStore};
use crate::rng::{normal_vec, substream, Stream};
use crate::skeleton::SkeletonTopology;
use crate::stepgen::{stack_gaits, Generator, GeneratorConfig, LossWeights, LATENT_DIM};
use crate::tensor::Tensor;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub lambda_c: f64,
    pub lambda_d: f64,
    pub beta_kl: f64,
    pub split: [f64; 3],
    pub seed: u64,
}

impl TrainConfig {
    pub fn generator_default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 150,
            lr: 0.1,
            decay_epochs: vec![75, 113, 132],
            decay_factor: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 5e-4,
            lambda_c: 1.0,
            lambda_d: 1.0,
            beta_kl: 1.0,
            split: [0.7, 0.2, 0.1],
            seed: 0,
        }
    }

    pub fn classifier_default() -> Self {
        TrainConfig {
            epochs: 500,
            decay_epochs: vec![250, 375, 438],
            ..Self::generator_default()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_c: self.lambda_c,
            lambda_d: self.lambda_d,
            beta_kl: self.beta_kl,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!(
                "decay_factor = {} must be in (0, 1]",
                self.decay_factor
            ));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad("decay_epochs must be strictly increasing".into());
        }
        if self.decay_epochs.last().is_some_and(|&d| d >= self.epochs) {
            return bad("decay_epochs must be below epochs".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{} = {} must be in [0, 1)", name, b));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative".into());
        }
        self.loss_weights().validate()?;
        if self.split.iter().any(|&r| !(0.0..=1.0).contains(&r))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "split ratios {:?} must be in [0, 1] and sum to 1",
                self.split
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Learning rate for a 1-based epoch: the initial rate multiplied by the
/// decay factor once for every decay epoch already completed.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch == 0 || epoch > cfg.epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {} outside 1..={}",
            epoch, cfg.epochs
        )));
    }
    let drops = cfg.decay_epochs.iter().filter(|&&d| epoch > d).count();
    Ok(cfg.lr * cfg.decay_factor.powi(drops as i32))
}

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

/// One Adam update with bias correction and decoupled weight decay.
/// Parameters without a gradient entry are left untouched.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    hp: AdamParams,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.param(name)?;
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{}: parameter {:?} vs gradient {:?}",
                    name,
                    p.shape(),
                    g.shape()
                ),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (name, g) in grads {
        let p = params.param_mut(name)?;
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = hp.beta1 * md[i] + (1.0 - hp.beta1) * gi;
            vd[i] = hp.beta2 * vd[i] + (1.0 - hp.beta2) * gi * gi;
            pd[i] -= hp.lr * hp.weight_decay * pd[i];
            let mh = md[i] / c1;
            let vh = vd[i] / c2;
            pd[i] -= hp.lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

fn adam_params(cfg: &TrainConfig, lr: f64) -> AdamParams {
    AdamParams {
        lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        weight_decay: cfg.weight_decay,
    }
}

/// Dataset indices of a train/validation/test split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<GaitSequence>,
    pub val: Vec<GaitSequence>,
    pub test: Vec<GaitSequence>,
}

/// Stratified shuffle split. Split sizes follow the rounded ratios of the
/// whole dataset; each class is divided as close to the ratios as those
/// totals allow.
pub fn split_indices(labels: &[Emotion], ratios: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot split an empty dataset".into(),
        ));
    }
    let n = labels.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "class {} has {} members; stratified splitting needs at least 3",
                Emotion::from_index(c).expect("class index"),
                members.len()
            )));
        }
    }
    let a = (ratios[0] * n as f64).round() as usize;
    let b = ((ratios[1] * n as f64).round() as usize).min(n - a.min(n));
    let targets = [a.min(n), b, n - a.min(n) - b];

    let mut alloc = [[0usize; 3]; NUM_CLASSES];
    let mut fractions = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        for k in 0..3 {
            let exact = members.len() as f64 * ratios[k];
            alloc[c][k] = exact.floor() as usize;
            fractions.push((exact - exact.floor(), c, k));
        }
    }
    let mut row_left: Vec<isize> = (0..NUM_CLASSES)
        .map(|c| by_class[c].len() as isize - alloc[c].iter().sum::<usize>() as isize)
        .collect();
    let mut col_left: Vec<isize> = (0..3)
        .map(|k| {
            targets[k] as isize - (0..NUM_CLASSES).map(|c| alloc[c][k]).sum::<usize>() as isize
        })
        .collect();
    fractions.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    for &(_, c, k) in &fractions {
        if row_left[c] > 0 && col_left[k] > 0 {
            alloc[c][k] += 1;
            row_left[c] -= 1;
            col_left[k] -= 1;
        }
    }
    for c in 0..NUM_CLASSES {
        while row_left[c] > 0 {
            let k = (0..3).find(|&k| col_left[k] > 0).unwrap_or(0);
            alloc[c][k] += 1;
            row_left[c] -= 1;
            col_left[k] -= 1;
        }
    }

    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (c, members) in by_class.iter().enumerate() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut substream(seed, Stream::Data, c as u64 + 1));
        let (tr, rest) = shuffled.split_at(alloc[c][0]);
        let (va, te) = rest.split_at(alloc[c][1]);
        out.train.extend_from_slice(tr);
        out.val.extend_from_slice(va);
        out.test.extend_from_slice(te);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

fn labels_of(gaits: &[GaitSequence]) -> Result<Vec<Emotion>> {
    gaits
        .iter()
        .enumerate()
        .map(|(i, g)| {
            g.label()
                .ok_or_else(|| Error::InvalidArgument(format!("gait {} has no label", i)))
        })
        .collect()
}

pub fn split_dataset(gaits: &[GaitSequence], ratios: [f64; 3], seed: u64) -> Result<Split> {
    let idx = split_indices(&labels_of(gaits)?, ratios, seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| gaits[i].clone()).collect();
    Ok(Split {
        train: pick(&idx.train),
        val: pick(&idx.val),
        test: pick(&idx.test),
    })
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, Stream::Data, 1 << 40 | epoch as u64));
    order
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorEpoch {
    pub epoch: usize,
    pub lr: f64,
    /// Per-gait mean of `ℒ_o + λ_c ℒ_c + λ_d ℒ_d`.
    pub loss_recon: f64,
    pub loss_original: f64,
    pub loss_push: f64,
    pub loss_pull: f64,
    pub kl: f64,
    pub loss_total: f64,
}

pub struct GeneratorRun {
    pub generator: Generator,
    pub history: Vec<GeneratorEpoch>,
}

/// Train a freshly initialized generator on `gaits` (all labeled).
pub fn train_generator(
    gaits: &[GaitSequence],
    cfg: &TrainConfig,
    gen_cfg: GeneratorConfig,
    topo: &SkeletonTopology,
) -> Result<GeneratorRun> {
    cfg.validate()?;
    let generator = Generator::new(gen_cfg, topo, cfg.seed)?;
    train_generator_from(generator, gaits, cfg)
}

/// Continue training an existing generator.
pub fn train_generator_from(
    mut generator: Generator,
    gaits: &[GaitSequence],
    cfg: &TrainConfig,
) -> Result<GeneratorRun> {
    cfg.validate()?;
    if gaits.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let labels = labels_of(gaits)?;
    let weights = cfg.loss_weights();
    let mut state = AdamState::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch)?;
        let order = epoch_order(gaits.len(), cfg.seed, epoch);
        let mut sums = [0.0; 6];
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&GaitSequence> = batch.iter().map(|&i| &gaits[i]).collect();
            let blabels: Vec<Emotion> = batch.iter().map(|&i| labels[i]).collect();
            let x = stack_gaits(&items)?;
            let mut rng = substream(cfg.seed, Stream::Noise, (epoch as u64) << 32 | bi as u64);
            let noise = Tensor::new(
                vec![batch.len(), LATENT_DIM],
                normal_vec(&mut rng, batch.len() * LATENT_DIM),
            )?;
            let mut tg = generator.training_graph(&x, &blabels, &noise, &weights, Mode::Train)?;
            let bindings = generator.store().bindings();
            let total = tg.graph.forward(tg.total, &bindings).map_err(|e| match e {
                Error::NonFinite(m) => {
                    Error::NonFinite(format!("generator diverged at epoch {}: {}", epoch, m))
                }
                other => other,
            })?;
            let total = total.item();
            if !total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "generator loss at epoch {}",
                    epoch
                )));
            }
            let nodes = [
                tg.losses.reconstruction,
                tg.losses.original,
                tg.losses.push,
                tg.losses.pull,
                tg.kl,
            ];
            let w = batch.len() as f64;
            for (s, e) in sums.iter_mut().zip(nodes) {
                *s += w * tg.graph.value(e).expect("forward ran").item();
            }
            sums[5] += w * total;
            let grads = tg.graph.backward(tg.total, &Tensor::scalar(1.0))?;
            update_running_stats(generator.store_mut(), &tg.graph, &tg.bn_nodes)?;
            adam_step(
                generator.store_mut(),
                &grads,
                &mut state,
                adam_params(cfg, lr),
            )?;
        }
        let n = gaits.len() as f64;
        let row = GeneratorEpoch {
            epoch,
            lr,
            loss_recon: sums[0] / n,
            loss_original: sums[1] / n,
            loss_push: sums[2] / n,
            loss_pull: sums[3] / n,
            kl: sums[4] / n,
            loss_total: sums[5] / n,
        };
        log::info!(
            "generator epoch {}: recon {:.4} kl {:.4}",
            epoch,
            row.loss_recon,
            row.kl
        );
        history.push(row);
    }
    if !generator.store().is_finite() {
        return Err(Error::NonFinite(
            "generator parameters after training".into(),
        ));
    }
    Ok(GeneratorRun { generator, history })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

pub struct ClassifierRun {
    /// Parameters from the epoch with the best validation accuracy.
    pub classifier: Classifier,
    pub best_epoch: usize,
    pub history: Vec<ClassifierEpoch>,
    pub train_size: usize,
}

/// Fraction of gaits whose predicted class equals the label.
pub fn classifier_accuracy(clf: &Classifier, gaits: &[GaitSequence]) -> Result<f64> {
    if gaits.is_empty() {
        return Ok(0.0);
    }
    let labels = labels_of(gaits)?;
    let mut correct = 0usize;
    for (chunk, lchunk) in gaits.chunks(64).zip(labels.chunks(64)) {
        let refs: Vec<&GaitSequence> = chunk.iter().collect();
        let preds = clf.predict_batch(&refs)?;
        correct += preds.iter().zip(lchunk).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / gaits.len() as f64)
}

/// Train a classifier of the given head on `train` plus `augment` (training
/// only), selecting the epoch with the best accuracy on `val`.
pub fn train_classifier(
    train: &[GaitSequence],
    val: &[GaitSequence],
    augment: &[GaitSequence],
    cfg: &TrainConfig,
    clf_cfg: ClassifierConfig,
    topo: &SkeletonTopology,
) -> Result<ClassifierRun> {
    cfg.validate()?;
    let mut data: Vec<GaitSequence> = train.to_vec();
    data.extend_from_slice(augment);
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let labels: Vec<usize> = labels_of(&data)?.iter().map(|l| l.index()).collect();
    let head = clf_cfg.head;
    let mut clf = Classifier::new(clf_cfg, topo, cfg.seed)?;
    let affect: Vec<AffectiveVector> = match head {
        Head::Hybrid => {
            let refs: Vec<&GaitSequence> = data.iter().collect();
            let a = clf.affect_of(&refs)?;
            clf.fit_affect_normalization(&a)?;
            a
        }
        Head::Baseline => Vec::new(),
    };
    let mut state = AdamState::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch)?;
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<&GaitSequence> = batch.iter().map(|&i| &data[i]).collect();
            let blabels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let x = stack_gaits(&items)?;
            let a = match head {
                Head::Hybrid => {
                    let rows: Vec<AffectiveVector> =
                        batch.iter().map(|&i| affect[i].clone()).collect();
                    Some(clf.normalize_affect(&rows)?)
                }
                Head::Baseline => None,
            };
            let mut cg = clf.graph(&x, a.as_ref(), Some(&blabels), head, Mode::Train, None)?;
            let loss_e = cg.loss.expect("labels given");
            let loss = cg.graph.forward(loss_e, &clf.store().bindings())?.item();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "classifier loss at epoch {}",
                    epoch
                )));
            }
            loss_sum += loss * batch.len() as f64;
            let logits = cg.graph.value(cg.logits).expect("forward ran");
            for (row, &l) in logits.data().chunks(NUM_CLASSES).zip(&blabels) {
                if crate::classifier::predict(row)?.index() == l {
                    correct += 1;
                }
            }
            let grads = cg.graph.backward(loss_e, &Tensor::scalar(1.0))?;
            update_running_stats(clf.store_mut(), &cg.graph, &cg.bn_nodes)?;
            adam_step(clf.store_mut(), &grads, &mut state, adam_params(cfg, lr))?;
        }
        let val_accuracy = classifier_accuracy(&clf, val)?;
        let n = data.len() as f64;
        let row = ClassifierEpoch {
            epoch,
            lr,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_accuracy,
        };
        log::info!(
            "classifier epoch {}: loss {:.4} train {:.3} val {:.3}",
            epoch,
            row.train_loss,
            row.train_accuracy,
            row.val_accuracy
        );
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, clf.store().clone()));
        }
        history.push(row);
    }
    let (_, best_epoch, store) = best.expect("at least one epoch");
    *clf.store_mut() = store;
    Ok(ClassifierRun {
        classifier: clf,
        best_epoch,
        history,
        train_size: data.len(),
    })
}

/// Write rows as CSV with a header taken from the field names.
pub fn write_history_csv<T: Serialize, W: Write>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
