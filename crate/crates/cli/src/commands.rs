//! Implementations of the subcommands. Each writes its artifacts and a
//! [`RunManifest`] into the output directory.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;
use stepgait_core::checkpoint::{
    decode_classifier, decode_generator, save_classifier, save_generator, CLASSIFIER_MAGIC,
    GENERATOR_MAGIC,
};
use stepgait_core::classifier::{Classifier, ClassifierConfig, Head};
use stepgait_core::eval::{
    affective_features, confusion, fid, guided_backprop_saliency, Axis, ConfusionMatrix,
};
use stepgait_core::gait::NUM_CLASSES;
use stepgait_core::io::{load_gait, read_batch, write_batch};
use stepgait_core::skeleton::{default_topology, view_normalize, SkeletonTopology};
use stepgait_core::stepgen::{Generator, GeneratorConfig};
use stepgait_core::synth::{synth_dataset, SynthOptions};
use stepgait_core::training::{
    split_dataset, train_classifier, train_generator, write_history_csv, ClassifierEpoch,
    TrainConfig,
};
use stepgait_core::{Emotion, GaitSequence};

use crate::error::{CliError, CliResult, WithPath};
use crate::manifest::RunManifest;

pub const DATA_FILE: &str = "gaits.egt";
pub const GENERATED_FILE: &str = "generated.egt";
pub const GENERATOR_FILE: &str = "generator.stpg";
pub const CLASSIFIER_FILE: &str = "classifier.stpc";
pub const LOSS_FILE: &str = "loss.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const TEST_FILE: &str = "test.egt";
pub const SALIENCY_CSV: &str = "saliency.csv";
pub const SALIENCY_PGM: &str = "saliency.pgm";
pub const AUGCURVE_FILE: &str = "augcurve.csv";
pub const AUGCURVE_RUNS_FILE: &str = "augcurve_runs.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ClfMode {
    /// Learned features only.
    Baseline,
    /// Learned plus affective features.
    Step,
    /// As `step`, with generated gaits added to the training split.
    #[value(name = "step+aug")]
    StepAug,
}

impl ClfMode {
    pub fn head(self) -> Head {
        match self {
            ClfMode::Baseline => Head::Baseline,
            ClfMode::Step | ClfMode::StepAug => Head::Hybrid,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClfMode::Baseline => "baseline",
            ClfMode::Step => "step",
            ClfMode::StepAug => "step+aug",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FidFeatures {
    /// 29-dimensional affective vectors.
    Affective,
    /// Penultimate features of the classifier checkpoint.
    Classifier,
}

fn create_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn load_config(
    path: Option<&Path>,
    default: TrainConfig,
    seed: Option<u64>,
) -> CliResult<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p).at(p)?,
        None => default,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_gaits(path: &Path) -> CliResult<Vec<GaitSequence>> {
    let gaits = read_batch(path).at(path)?;
    if gaits.is_empty() {
        return Err(CliError::Data(format!(
            "{} contains no gaits",
            path.display()
        )));
    }
    Ok(gaits)
}

fn normalize_all(gaits: &[GaitSequence], topo: &SkeletonTopology) -> CliResult<Vec<GaitSequence>> {
    Ok(gaits
        .iter()
        .map(|g| view_normalize(g, topo))
        .collect::<stepgait_core::Result<_>>()?)
}

/// Every gait labeled, all four classes present, every gait the same length.
fn check_training_data(gaits: &[GaitSequence], what: &str) -> CliResult<()> {
    let mut classes = BTreeSet::new();
    for (i, g) in gaits.iter().enumerate() {
        match g.label() {
            Some(l) => classes.insert(l),
            None => return Err(CliError::Data(format!("{} gait {} has no label", what, i))),
        };
        if g.frames() != gaits[0].frames() {
            return Err(CliError::Data(format!(
                "{} gait {} has {} frames, expected {}",
                what,
                i,
                g.frames(),
                gaits[0].frames()
            )));
        }
    }
    if classes.len() != NUM_CLASSES {
        return Err(CliError::Data(format!(
            "{} covers {} of the {} emotion classes",
            what,
            classes.len(),
            NUM_CLASSES
        )));
    }
    Ok(())
}

fn write_metrics(path: &Path, rows: &[(&str, String)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "value"])?;
    for (k, v) in rows {
        w.write_record([*k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_csv_rows<T: serde::Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    write_history_csv(BufWriter::new(fs::File::create(path)?), rows)?;
    Ok(())
}

#[derive(Clone, Debug, clap::Args)]
pub struct SynthArgs {
    /// Gaits per emotion class.
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 75)]
    pub frames: usize,
    #[arg(long, default_value_t = 25.0)]
    pub frame_rate: f64,
    /// Per-joint Gaussian jitter in meters.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    /// Relative per-gait perturbation of the style parameters.
    #[arg(long, default_value_t = 0.05)]
    pub style_jitter: f64,
    /// Keep every walk in the canonical frame instead of a random viewpoint.
    #[arg(long)]
    pub canonical: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<RunManifest> {
    create_dir(&a.out)?;
    let opts = SynthOptions {
        frames: a.frames,
        frame_rate: a.frame_rate,
        noise_sigma: a.noise,
        style_jitter: a.style_jitter,
        random_view: !a.canonical,
    };
    let gaits = synth_dataset(a.per_class, &opts, a.seed)?;
    let path = a.out.join(DATA_FILE);
    write_batch(&gaits, &path).at(&path)?;
    info!("wrote {} gaits to {}", gaits.len(), path.display());
    let mut m = RunManifest::new("synth", None, a.seed, &a.out);
    m.arg("per_class", a.per_class)
        .arg("frames", a.frames)
        .arg("frame_rate", a.frame_rate)
        .arg("noise", a.noise)
        .arg("style_jitter", a.style_jitter)
        .arg("canonical", a.canonical);
    m.finish(&[path])
}

#[derive(Clone, Debug, clap::Args)]
pub struct TrainGenArgs {
    /// TOML training configuration; generator defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// EGT1 file of labeled gaits. All of them are used for training.
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_train_gen(a: &TrainGenArgs) -> CliResult<RunManifest> {
    create_dir(&a.out)?;
    let cfg = load_config(
        a.config.as_deref(),
        TrainConfig::generator_default(),
        a.seed,
    )?;
    let topo = default_topology();
    let gaits = normalize_all(&read_gaits(&a.data)?, &topo)?;
    check_training_data(&gaits, "training data")?;
    let gen_cfg = GeneratorConfig {
        frames: gaits[0].frames(),
        joints: topo.num_joints(),
        frame_rate: gaits[0].frame_rate(),
        ..GeneratorConfig::default()
    };
    info!(
        "training generator on {} gaits for {} epochs",
        gaits.len(),
        cfg.epochs
    );
    let run = train_generator(&gaits, &cfg, gen_cfg, &topo)?;
    let ckpt = a.out.join(GENERATOR_FILE);
    save_generator(&run.generator, &topo, &ckpt).at(&ckpt)?;
    let loss = a.out.join(LOSS_FILE);
    write_csv_rows(&loss, &run.history)?;
    let mut m = RunManifest::new("train-gen", a.config.as_deref(), cfg.seed, &a.out);
    m.input(&a.data)?;
    if let Some(c) = &a.config {
        m.input(c)?;
    }
    m.finish(&[ckpt, loss])
}

fn read_checkpoint(path: &Path) -> CliResult<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| CliError::Core {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    Ok(bytes)
}

fn load_generator_file(path: &Path) -> CliResult<Generator> {
    Ok(decode_generator(&read_checkpoint(path)?).at(path)?.0)
}

fn load_classifier_file(path: &Path) -> CliResult<Classifier> {
    decode_classifier(&read_checkpoint(path)?).at(path)
}

/// `all` or one emotion name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelChoice {
    All,
    One(Emotion),
}

pub fn parse_label_choice(s: &str) -> Result<LabelChoice, String> {
    if s == "all" {
        return Ok(LabelChoice::All);
    }
    s.parse()
        .map(LabelChoice::One)
        .map_err(|e: stepgait_core::Error| e.to_string())
}

pub fn parse_emotion(s: &str) -> Result<Emotion, String> {
    s.parse().map_err(|e: stepgait_core::Error| e.to_string())
}

pub fn parse_axis(s: &str) -> Result<Axis, String> {
    s.parse().map_err(|e: stepgait_core::Error| e.to_string())
}

/// `count` gaits for each requested class, class-major.
pub fn generate_gaits(
    gen: &Generator,
    label: LabelChoice,
    count: usize,
    seed: u64,
) -> CliResult<Vec<GaitSequence>> {
    let labels: Vec<Emotion> = match label {
        LabelChoice::All => Emotion::ALL.to_vec(),
        LabelChoice::One(e) => vec![e],
    };
    let mut out = Vec::with_capacity(labels.len() * count);
    for l in labels {
        // Distinct classes draw from distinct noise streams.
        out.extend(gen.generate(l, count, seed.wrapping_add(l.index() as u64 * 0x9e37_79b9))?);
    }
    Ok(out)
}

#[derive(Clone, Debug, clap::Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Emotion class, or `all` for `count` gaits of every class.
    #[arg(long, value_parser = parse_label_choice, default_value = "all")]
    pub label: LabelChoice,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<RunManifest> {
    create_dir(&a.out)?;
    let gen = load_generator_file(&a.checkpoint)?;
    let gaits = generate_gaits(&gen, a.label, a.count, a.seed)?;
    let path = a.out.join(GENERATED_FILE);
    write_batch(&gaits, &path).at(&path)?;
    info!(
        "wrote {} generated gaits to {}",
        gaits.len(),
        path.display()
    );
    let mut m = RunManifest::new("generate", None, a.seed, &a.out);
    m.input(&a.checkpoint)?;
    let label = match a.label {
        LabelChoice::All => "all",
        LabelChoice::One(e) => e.as_str(),
    };
    m.arg("label", label).arg("count", a.count);
    m.finish(&[path])
}

/// Every `.egt` file directly inside `dir`, in name order.
fn read_augment_dir(dir: &Path) -> CliResult<(Vec<GaitSequence>, Vec<PathBuf>)> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Core {
            path: dir.to_path_buf(),
            source: e.into(),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "egt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!(
            "no .egt files in {}",
            dir.display()
        )));
    }
    let mut gaits = Vec::new();
    for f in &files {
        gaits.extend(read_gaits(f)?);
    }
    Ok((gaits, files))
}

#[derive(Clone, Debug, clap::Args)]
pub struct TrainClfArgs {
    /// TOML training configuration; classifier defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// EGT1 file of labeled gaits, split into train/val/test by the config ratios.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ClfMode::Step)]
    pub mode: ClfMode,
    /// Directory of EGT1 files added to the training split (`step+aug` only).
    #[arg(long)]
    pub augment_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Outcome of one classifier training run.
#[derive(Clone, Debug)]
pub struct ClassifierReport {
    pub classifier: Classifier,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub best_epoch: usize,
    pub history: Vec<ClassifierEpoch>,
    pub val_accuracy: f64,
    /// `None` when the test split is empty.
    pub confusion: Option<ConfusionMatrix>,
    pub test_accuracy: f64,
    pub test_macro_accuracy: f64,
}

/// Train on the train split (plus `augment`) and score the test split.
/// All inputs must already be view-normalized.
pub fn fit_and_score(
    train: &[GaitSequence],
    val: &[GaitSequence],
    test: &[GaitSequence],
    augment: &[GaitSequence],
    head: Head,
    cfg: &TrainConfig,
    topo: &SkeletonTopology,
) -> CliResult<ClassifierReport> {
    let clf_cfg = ClassifierConfig {
        joints: topo.num_joints(),
        head,
        ..ClassifierConfig::default()
    };
    let run = train_classifier(train, val, augment, cfg, clf_cfg, topo)?;
    let refs: Vec<&GaitSequence> = test.iter().collect();
    let labels: Vec<Emotion> = test.iter().map(|g| g.label().unwrap()).collect();
    let cm = if refs.is_empty() {
        None
    } else {
        Some(confusion(&run.classifier.predict_batch(&refs)?, &labels)?)
    };
    let (test_accuracy, test_macro_accuracy) = cm
        .as_ref()
        .map_or((f64::NAN, f64::NAN), |c| (c.accuracy(), c.macro_accuracy()));
    let val_accuracy = run
        .history
        .iter()
        .find(|h| h.epoch == run.best_epoch)
        .map_or(f64::NAN, |h| h.val_accuracy);
    Ok(ClassifierReport {
        classifier: run.classifier,
        train_size: run.train_size,
        val_size: val.len(),
        test_size: test.len(),
        best_epoch: run.best_epoch,
        history: run.history,
        val_accuracy,
        confusion: cm,
        test_accuracy,
        test_macro_accuracy,
    })
}

pub fn cmd_train_clf(a: &TrainClfArgs) -> CliResult<RunManifest> {
    let augment_files = match (a.mode, &a.augment_dir) {
        (ClfMode::StepAug, Some(dir)) => Some(read_augment_dir(dir)?),
        (ClfMode::StepAug, None) => {
            return Err(CliError::Config("mode step+aug needs --augment-dir".into()))
        }
        (_, Some(_)) => {
            return Err(CliError::Config(format!(
                "--augment-dir is only used by mode step+aug, not {}",
                a.mode.as_str()
            )))
        }
        (_, None) => None,
    };
    create_dir(&a.out)?;
    let cfg = load_config(
        a.config.as_deref(),
        TrainConfig::classifier_default(),
        a.seed,
    )?;
    let topo = default_topology();
    let raw = read_gaits(&a.data)?;
    check_training_data(&raw, "data")?;
    let split = split_dataset(&raw, cfg.split, cfg.seed)?;
    let (train, val, test) = (
        normalize_all(&split.train, &topo)?,
        normalize_all(&split.val, &topo)?,
        normalize_all(&split.test, &topo)?,
    );
    let augment = match &augment_files {
        Some((g, _)) => {
            let g = normalize_all(g, &topo)?;
            check_training_data(&g, "augment data")?;
            if g[0].frames() != raw[0].frames() {
                return Err(CliError::Data(format!(
                    "augment gaits have {} frames, data has {}",
                    g[0].frames(),
                    raw[0].frames()
                )));
            }
            g
        }
        None => Vec::new(),
    };
    info!(
        "training {} classifier: {} train (+{} augment), {} val, {} test",
        a.mode.as_str(),
        train.len(),
        augment.len(),
        val.len(),
        test.len()
    );
    let rep = fit_and_score(&train, &val, &test, &augment, a.mode.head(), &cfg, &topo)?;

    let ckpt = a.out.join(CLASSIFIER_FILE);
    save_classifier(&rep.classifier, &ckpt).at(&ckpt)?;
    let hist = a.out.join(HISTORY_FILE);
    write_csv_rows(&hist, &rep.history)?;
    let test_path = a.out.join(TEST_FILE);
    write_batch(&split.test, &test_path).at(&test_path)?;
    let metrics = a.out.join(METRICS_FILE);
    write_metrics(
        &metrics,
        &[
            ("mode", a.mode.as_str().to_string()),
            ("train_size", rep.train_size.to_string()),
            ("augment_size", augment.len().to_string()),
            ("val_size", rep.val_size.to_string()),
            ("test_size", rep.test_size.to_string()),
            ("best_epoch", rep.best_epoch.to_string()),
            ("val_accuracy", rep.val_accuracy.to_string()),
            ("test_accuracy", rep.test_accuracy.to_string()),
            ("test_macro_accuracy", rep.test_macro_accuracy.to_string()),
        ],
    )?;
    let mut outputs = vec![ckpt, hist, test_path, metrics];
    if let Some(c) = &rep.confusion {
        let path = a.out.join(CONFUSION_FILE);
        c.write_csv(fs::File::create(&path)?)?;
        outputs.push(path);
    }

    let mut m = RunManifest::new("train-clf", a.config.as_deref(), cfg.seed, &a.out);
    m.arg("mode", a.mode.as_str());
    m.input(&a.data)?;
    if let Some(c) = &a.config {
        m.input(c)?;
    }
    if let Some((_, files)) = &augment_files {
        for f in files {
            m.input(f)?;
        }
    }
    m.finish(&outputs)
}

#[derive(Clone, Debug, clap::Args)]
pub struct EvalArgs {
    /// Classifier (STPC) or generator (STPG) checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// EGT1 file of real labeled gaits.
    #[arg(long)]
    pub data: PathBuf,
    /// Generated gaits to compare against `data` by FID.
    #[arg(long)]
    pub generated: Option<PathBuf>,
    /// Gaits sampled per class when the checkpoint is a generator.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = FidFeatures::Affective)]
    pub fid_features: FidFeatures,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<RunManifest> {
    create_dir(&a.out)?;
    let topo = default_topology();
    let data = normalize_all(&read_gaits(&a.data)?, &topo)?;
    let bytes = read_checkpoint(&a.checkpoint)?;
    let mut rows: Vec<(&str, String)> = Vec::new();
    let mut outputs = Vec::new();
    let mut m = RunManifest::new("eval", None, a.seed, &a.out);
    m.input(&a.checkpoint)?.input(&a.data)?;

    let (classifier, generated) = if bytes.starts_with(CLASSIFIER_MAGIC) {
        let clf = decode_classifier(&bytes).at(&a.checkpoint)?;
        let labels: Vec<Emotion> = data
            .iter()
            .enumerate()
            .map(|(i, g)| {
                g.label()
                    .ok_or_else(|| CliError::Data(format!("gait {} has no label", i)))
            })
            .collect::<CliResult<_>>()?;
        let refs: Vec<&GaitSequence> = data.iter().collect();
        let cm = confusion(&clf.predict_batch(&refs)?, &labels)?;
        rows.push(("gaits", data.len().to_string()));
        rows.push(("accuracy", cm.accuracy().to_string()));
        rows.push(("macro_accuracy", cm.macro_accuracy().to_string()));
        let path = a.out.join(CONFUSION_FILE);
        cm.write_csv(fs::File::create(&path)?)?;
        outputs.push(path);
        let generated = match &a.generated {
            Some(p) => {
                m.input(p)?;
                Some(normalize_all(&read_gaits(p)?, &topo)?)
            }
            None => None,
        };
        (Some(clf), generated)
    } else if bytes.starts_with(GENERATOR_MAGIC) {
        if a.generated.is_some() {
            return Err(CliError::Config(
                "--generated cannot be combined with a generator checkpoint".into(),
            ));
        }
        let gen = decode_generator(&bytes).at(&a.checkpoint)?.0;
        m.arg("count", a.count);
        let g = generate_gaits(&gen, LabelChoice::All, a.count, a.seed)?;
        (None, Some(normalize_all(&g, &topo)?))
    } else {
        return Err(CliError::Data(format!(
            "{} is not a checkpoint",
            a.checkpoint.display()
        )));
    };

    if let Some(generated) = generated {
        let (real_f, gen_f) = match (a.fid_features, &classifier) {
            (FidFeatures::Affective, _) => (
                affective_features(&data, &topo)?,
                affective_features(&generated, &topo)?,
            ),
            (FidFeatures::Classifier, Some(clf)) => {
                let r: Vec<&GaitSequence> = data.iter().collect();
                let g: Vec<&GaitSequence> = generated.iter().collect();
                (clf.features(&r)?, clf.features(&g)?)
            }
            (FidFeatures::Classifier, None) => {
                return Err(CliError::Config(
                    "classifier FID features need a classifier checkpoint".into(),
                ))
            }
        };
        let d = fid(&real_f, &gen_f)?;
        let name = match a.fid_features {
            FidFeatures::Affective => "fid_affective",
            FidFeatures::Classifier => "fid_classifier",
        };
        rows.push(("generated", generated.len().to_string()));
        rows.push((name, d.to_string()));
        let disp = |gs: &[GaitSequence]| {
            gs.iter().map(|g| g.mean_displacement()).sum::<f64>() / gs.len() as f64
        };
        rows.push(("mean_displacement_real", disp(&data).to_string()));
        rows.push(("mean_displacement_generated", disp(&generated).to_string()));
    }
    let metrics = a.out.join(METRICS_FILE);
    write_metrics(&metrics, &rows)?;
    outputs.insert(0, metrics);
    m.arg(
        "fid_features",
        format!("{:?}", a.fid_features).to_lowercase(),
    );
    m.finish(&outputs)
}

#[derive(Clone, Debug, clap::Args)]
pub struct SaliencyArgs {
    /// Classifier (STPC) checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Gait JSON document, or an EGT1 file together with `--index`.
    #[arg(long)]
    pub gait: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Target emotion class.
    #[arg(long, value_parser = parse_emotion)]
    pub class: Emotion,
    #[arg(long, value_parser = parse_axis, default_value = "y")]
    pub axis: Axis,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_saliency(a: &SaliencyArgs) -> CliResult<RunManifest> {
    create_dir(&a.out)?;
    let clf = load_classifier_file(&a.checkpoint)?;
    let gait = if a.gait.extension().is_some_and(|x| x == "json") {
        load_gait(&a.gait).at(&a.gait)?
    } else {
        let all = read_gaits(&a.gait)?;
        let n = all.len();
        all.into_iter().nth(a.index).ok_or_else(|| {
            CliError::Data(format!("index {} out of range for {} gaits", a.index, n))
        })?
    };
    let gait = view_normalize(&gait, clf.topology())?;
    let map = guided_backprop_saliency(&clf, &gait, a.class, a.axis)?;
    let csv_path = a.out.join(SALIENCY_CSV);
    map.write_csv(fs::File::create(&csv_path)?, clf.topology().names())?;
    let pgm = a.out.join(SALIENCY_PGM);
    map.write_pgm(BufWriter::new(fs::File::create(&pgm)?))?;
    let mut m = RunManifest::new("saliency", None, 0, &a.out);
    m.input(&a.checkpoint)?.input(&a.gait)?;
    m.arg("index", a.index)
        .arg("class", a.class.as_str())
        .arg("axis", a.axis);
    m.finish(&[csv_path, pgm])
}

#[derive(Clone, Debug, clap::Args)]
pub struct AugcurveArgs {
    /// TOML classifier training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Generator (STPG) checkpoint supplying the augment gaits.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Generated gaits per class for each curve point.
    #[arg(long, value_delimiter = ',', default_value = "0,250,500,1000")]
    pub sizes: Vec<usize>,
    /// Keep at most this many real training gaits per class.
    #[arg(long)]
    pub thin: Option<usize>,
    /// Independent repetitions per point, seeded `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct AugcurveRow {
    pub augment_per_class: usize,
    pub runs: usize,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct AugcurveRun {
    pub augment_per_class: usize,
    pub seed: u64,
    pub train_size: usize,
    pub test_accuracy: f64,
}

/// First `n` gaits of each class, keeping their order.
pub fn thin_per_class(gaits: &[GaitSequence], n: usize) -> Vec<GaitSequence> {
    let mut seen = [0usize; NUM_CLASSES];
    gaits
        .iter()
        .filter(|g| {
            let c = g.label().map_or(0, Emotion::index);
            seen[c] += 1;
            seen[c] <= n
        })
        .cloned()
        .collect()
}

pub fn cmd_augcurve(a: &AugcurveArgs) -> CliResult<RunManifest> {
    if a.sizes.is_empty() || a.repeats == 0 {
        return Err(CliError::Config(
            "need at least one size and one repeat".into(),
        ));
    }
    create_dir(&a.out)?;
    let base = load_config(
        a.config.as_deref(),
        TrainConfig::classifier_default(),
        a.seed,
    )?;
    let topo = default_topology();
    let raw = read_gaits(&a.data)?;
    check_training_data(&raw, "data")?;
    let gen = load_generator_file(&a.checkpoint)?;
    if gen.config().frames != raw[0].frames() {
        return Err(CliError::Data(format!(
            "generator emits {} frames, data has {}",
            gen.config().frames,
            raw[0].frames()
        )));
    }
    let max_size = *a.sizes.iter().max().unwrap();
    let mut runs = Vec::new();
    for r in 0..a.repeats as u64 {
        let mut cfg = base.clone();
        cfg.seed = base.seed.wrapping_add(r);
        let split = split_dataset(&raw, cfg.split, cfg.seed)?;
        let mut train = normalize_all(&split.train, &topo)?;
        if let Some(n) = a.thin {
            train = thin_per_class(&train, n);
        }
        let val = normalize_all(&split.val, &topo)?;
        let test = normalize_all(&split.test, &topo)?;
        let pool = if max_size > 0 {
            normalize_all(
                &generate_gaits(&gen, LabelChoice::All, max_size, cfg.seed)?,
                &topo,
            )?
        } else {
            Vec::new()
        };
        for &size in &a.sizes {
            let augment: Vec<GaitSequence> = pool
                .chunks(max_size.max(1))
                .flat_map(|class| class[..size].iter().cloned())
                .collect();
            let rep = fit_and_score(&train, &val, &test, &augment, Head::Hybrid, &cfg, &topo)?;
            info!(
                "augment {}/class seed {}: test accuracy {}",
                size, cfg.seed, rep.test_accuracy
            );
            runs.push(AugcurveRun {
                augment_per_class: size,
                seed: cfg.seed,
                train_size: rep.train_size,
                test_accuracy: rep.test_accuracy,
            });
        }
    }
    let rows: Vec<AugcurveRow> = a
        .sizes
        .iter()
        .map(|&s| {
            let accs: Vec<f64> = runs
                .iter()
                .filter(|r| r.augment_per_class == s)
                .map(|r| r.test_accuracy)
                .collect();
            AugcurveRow {
                augment_per_class: s,
                runs: accs.len(),
                test_accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
            }
        })
        .collect();
    let curve = a.out.join(AUGCURVE_FILE);
    write_csv_rows(&curve, &rows)?;
    let detail = a.out.join(AUGCURVE_RUNS_FILE);
    write_csv_rows(&detail, &runs)?;
    let mut m = RunManifest::new("augcurve", a.config.as_deref(), base.seed, &a.out);
    m.input(&a.data)?.input(&a.checkpoint)?;
    if let Some(c) = &a.config {
        m.input(c)?;
    }
    let sizes: Vec<String> = a.sizes.iter().map(usize::to_string).collect();
    m.arg("sizes", sizes.join(","))
        .arg("thin", a.thin.map_or("none".to_string(), |n| n.to_string()))
        .arg("repeats", a.repeats);
    m.finish(&[curve, detail])
}
