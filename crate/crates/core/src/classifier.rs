//! Emotion classifiers on an ST-GCN trunk.
//!
//! Both heads share the trunk (three ST-GCN blocks, global pooling and a 1×1
//! convolution producing a 64-dimensional feature). The baseline head maps the
//! feature straight to 4 logits; the hybrid head appends the standardized
//! affective vector and applies two fully connected layers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::affective::{extract_affective, AffectiveVector, NUM_AFFECTIVE};
use crate::autodiff::{BackwardMode, Expr, Graph};
use crate::error::{Error, Result};
use crate::gait::{Emotion, GaitSequence, COORDS, NUM_CLASSES};
use crate::params::{init_linear, uniform_init, Mode, NetBuilder, ParamStore};
use crate::rng::{stream, Stream};
use crate::skeleton::{build_adjacency, AdjacencyMatrix, SkeletonTopology, NUM_JOINTS};
use crate::stepgen::stack_gaits;
use crate::stgcn::{init_block, stgcn_block, StgcnLayerConfig, DEFAULT_TEMPORAL_KERNEL};
use crate::tensor::Tensor;

pub const TRUNK_CHANNELS: [usize; 3] = [32, 64, 64];
pub const FEATURE_DIM: usize = 64;
pub const HYBRID_HIDDEN: usize = 128;
const TRUNK_PREFIX: [&str; 3] = ["clf.l1", "clf.l2", "clf.l3"];
const INPUT_NAME: &str = "input";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Baseline,
    Hybrid,
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Baseline => "baseline",
            Head::Hybrid => "hybrid",
        })
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Head::Baseline),
            "hybrid" => Ok(Head::Hybrid),
            other => Err(Error::Config(format!(
                "unknown classifier head `{}`",
                other
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub joints: usize,
    pub temporal_kernel: usize,
    pub head: Head,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            joints: NUM_JOINTS,
            temporal_kernel: DEFAULT_TEMPORAL_KERNEL,
            head: Head::Hybrid,
        }
    }
}

impl ClassifierConfig {
    pub fn trunk_layers(&self) -> [StgcnLayerConfig; 3] {
        let k = self.temporal_kernel;
        let [a, b, c] = TRUNK_CHANNELS;
        [
            StgcnLayerConfig::new(COORDS, a).kernel(k),
            StgcnLayerConfig::new(a, b).kernel(k),
            StgcnLayerConfig::new(b, c).kernel(k),
        ]
    }
}

/// Outputs of a classifier forward graph.
pub struct ClassifierGraph {
    pub graph: Graph,
    pub bn_nodes: Vec<(String, Expr)>,
    pub features: Expr,
    pub logits: Expr,
    pub loss: Option<Expr>,
}

/// Standardize affective vectors with stored per-feature mean and std.
fn standardize(vectors: &[AffectiveVector], mean: &Tensor, std: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(&[vectors.len(), NUM_AFFECTIVE]);
    for (i, v) in vectors.iter().enumerate() {
        for j in 0..NUM_AFFECTIVE {
            out.set(&[i, j], (v.values[j] - mean.data()[j]) / std.data()[j]);
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Classifier {
    config: ClassifierConfig,
    store: ParamStore,
    topo: SkeletonTopology,
    adj: AdjacencyMatrix,
}

impl Classifier {
    pub fn new(config: ClassifierConfig, topo: &SkeletonTopology, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Stream::Init);
        let mut store = ParamStore::new();
        for (prefix, cfg) in TRUNK_PREFIX.iter().zip(config.trunk_layers()) {
            init_block(&mut store, prefix, &cfg, &mut rng)?;
        }
        let c = TRUNK_CHANNELS[2];
        store.insert_param(
            "clf.conv.w",
            uniform_init(&[FEATURE_DIM, c, 1], c, &mut rng),
        );
        store.insert_param("clf.conv.b", Tensor::zeros(&[FEATURE_DIM]));
        init_linear(&mut store, "clf.fc", FEATURE_DIM, NUM_CLASSES, &mut rng);
        init_linear(
            &mut store,
            "hyb.fc1",
            FEATURE_DIM + NUM_AFFECTIVE,
            HYBRID_HIDDEN,
            &mut rng,
        );
        init_linear(&mut store, "hyb.fc2", HYBRID_HIDDEN, NUM_CLASSES, &mut rng);
        store.insert_buffer("affect.mean", Tensor::zeros(&[NUM_AFFECTIVE]));
        store.insert_buffer("affect.std", Tensor::ones(&[NUM_AFFECTIVE]));
        Self::from_parts(config, store, topo)
    }

    pub fn from_parts(
        config: ClassifierConfig,
        store: ParamStore,
        topo: &SkeletonTopology,
    ) -> Result<Self> {
        for l in config.trunk_layers() {
            l.validate()?;
        }
        if topo.num_joints() != config.joints {
            return Err(Error::Dimension {
                what: "V",
                expected: config.joints,
                found: topo.num_joints(),
            });
        }
        for name in ["affect.mean", "affect.std"] {
            if store.buffer(name)?.shape() != [NUM_AFFECTIVE] {
                return Err(Error::shape(
                    "classifier",
                    format!("{} must have 29 entries", name),
                ));
            }
        }
        let adj = build_adjacency(topo)?;
        Ok(Classifier {
            config,
            store,
            topo: topo.clone(),
            adj,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn head(&self) -> Head {
        self.config.head
    }

    pub fn set_head(&mut self, head: Head) {
        self.config.head = head;
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topo
    }

    /// Fit the affective standardization to a training set. Features with
    /// zero spread keep unit scale.
    pub fn fit_affect_normalization(&mut self, vectors: &[AffectiveVector]) -> Result<()> {
        if vectors.is_empty() {
            return Err(Error::InvalidArgument("no affective vectors to fit".into()));
        }
        let n = vectors.len() as f64;
        let mut mean = Tensor::zeros(&[NUM_AFFECTIVE]);
        let mut std = Tensor::ones(&[NUM_AFFECTIVE]);
        for j in 0..NUM_AFFECTIVE {
            let m = vectors.iter().map(|v| v.values[j]).sum::<f64>() / n;
            let var = vectors
                .iter()
                .map(|v| (v.values[j] - m).powi(2))
                .sum::<f64>()
                / n;
            mean.data_mut()[j] = m;
            if var.sqrt() > 1e-12 {
                std.data_mut()[j] = var.sqrt();
            }
        }
        *self.store.buffer_mut("affect.mean")? = mean;
        *self.store.buffer_mut("affect.std")? = std;
        Ok(())
    }

    pub fn normalize_affect(&self, vectors: &[AffectiveVector]) -> Result<Tensor> {
        Ok(standardize(
            vectors,
            self.store.buffer("affect.mean")?,
            self.store.buffer("affect.std")?,
        ))
    }

    pub fn affect_of(&self, gaits: &[&GaitSequence]) -> Result<Vec<AffectiveVector>> {
        gaits
            .iter()
            .map(|g| extract_affective(g, &self.topo))
            .collect()
    }

    /// Build the forward graph for `x: [N, 3, T, V]` and standardized
    /// affective features `affect: [N, 29]` (required by the hybrid head).
    /// With `input_name`, positions enter as a named input so that gradients
    /// with respect to them are returned.
    pub fn graph(
        &self,
        x: &Tensor,
        affect: Option<&Tensor>,
        labels: Option<&[usize]>,
        head: Head,
        mode: Mode,
        input_name: Option<&str>,
    ) -> Result<ClassifierGraph> {
        if x.rank() != 4 || x.shape()[1] != COORDS || x.shape()[3] != self.config.joints {
            return Err(Error::shape(
                "classifier",
                format!(
                    "expected N×3×T×{} input, got {:?}",
                    self.config.joints,
                    x.shape()
                ),
            ));
        }
        let n = x.shape()[0];
        let mut b = NetBuilder::new(&self.store, mode);
        let xe = match input_name {
            Some(name) => b.graph.input(name),
            None => b.graph.constant(x.clone()),
        };
        let adj = b.graph.constant(self.adj.tensor().clone());
        let mut h = xe;
        for (prefix, cfg) in TRUNK_PREFIX.iter().zip(self.config.trunk_layers()) {
            h = stgcn_block(&mut b, h, adj, prefix, &cfg)?;
        }
        let pooled = b.graph.mean_pool(h, &[2, 3]);
        let w = b.param("clf.conv.w");
        let bias = b.param("clf.conv.b");
        let conv = b.graph.temporal_conv(pooled, w, Some(bias));
        let features = b.graph.reshape(conv, &[n, FEATURE_DIM]);
        let logits = match head {
            Head::Baseline => b.linear(features, "clf.fc", n)?,
            Head::Hybrid => {
                let a = affect.ok_or_else(|| {
                    Error::InvalidArgument("hybrid head needs affective features".into())
                })?;
                if a.shape() != [n, NUM_AFFECTIVE] {
                    return Err(Error::Dimension {
                        what: "affective features",
                        expected: NUM_AFFECTIVE,
                        found: a.shape().get(1).copied().unwrap_or(0),
                    });
                }
                let ae = b.graph.constant(a.clone());
                let hybrid = b.graph.concat(&[features, ae], 1);
                let hidden = b.linear(hybrid, "hyb.fc1", n)?;
                let hidden = b.graph.relu(hidden);
                b.linear(hidden, "hyb.fc2", n)?
            }
        };
        let (mut graph, bn_nodes) = b.into_parts();
        let loss = match labels {
            Some(l) => {
                if l.len() != n {
                    return Err(Error::InvalidArgument(format!(
                        "{} labels for batch {}",
                        l.len(),
                        n
                    )));
                }
                Some(graph.softmax_cross_entropy(logits, l))
            }
            None => None,
        };
        Ok(ClassifierGraph {
            graph,
            bn_nodes,
            features,
            logits,
            loss,
        })
    }

    fn run(&self, gaits: &[&GaitSequence], head: Head, features: bool) -> Result<Tensor> {
        let x = stack_gaits(gaits)?;
        let affect = match head {
            Head::Hybrid => Some(self.normalize_affect(&self.affect_of(gaits)?)?),
            Head::Baseline => None,
        };
        let mut cg = self.graph(&x, affect.as_ref(), None, head, Mode::Eval, None)?;
        let root = if features { cg.features } else { cg.logits };
        cg.graph.forward(root, &self.store.bindings())
    }

    /// Eval-mode logits, one row of 4 per gait, using the configured head.
    pub fn logits(&self, gaits: &[&GaitSequence]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        self.logits_with(gaits, self.config.head)
    }

    pub fn logits_with(
        &self,
        gaits: &[&GaitSequence],
        head: Head,
    ) -> Result<Vec<[f64; NUM_CLASSES]>> {
        let t = self.run(gaits, head, false)?;
        Ok(t.data()
            .chunks(NUM_CLASSES)
            .map(|c| c.try_into().unwrap())
            .collect())
    }

    pub fn baseline_forward(&self, gait: &GaitSequence) -> Result<[f64; NUM_CLASSES]> {
        Ok(self.logits_with(&[gait], Head::Baseline)?[0])
    }

    /// Hybrid logits for a gait with an already extracted affective vector.
    pub fn hybrid_forward(
        &self,
        gait: &GaitSequence,
        affect: &AffectiveVector,
    ) -> Result<[f64; NUM_CLASSES]> {
        let x = stack_gaits(&[gait])?;
        let a = self.normalize_affect(std::slice::from_ref(affect))?;
        let mut cg = self.graph(&x, Some(&a), None, Head::Hybrid, Mode::Eval, None)?;
        let t = cg.graph.forward(cg.logits, &self.store.bindings())?;
        Ok(t.data().try_into().unwrap())
    }

    /// The 64-dimensional penultimate trunk feature of each gait.
    pub fn features(&self, gaits: &[&GaitSequence]) -> Result<Vec<Vec<f64>>> {
        let t = self.run(gaits, Head::Baseline, true)?;
        Ok(t.data().chunks(FEATURE_DIM).map(<[f64]>::to_vec).collect())
    }

    pub fn predict_batch(&self, gaits: &[&GaitSequence]) -> Result<Vec<Emotion>> {
        self.logits(gaits)?.iter().map(|l| predict(l)).collect()
    }

    /// Gradient of the `target` logit with respect to the input positions,
    /// `[3, T, V]`, with the configured head in eval mode.
    pub fn input_gradient(
        &self,
        gait: &GaitSequence,
        target: Emotion,
        mode: BackwardMode,
    ) -> Result<Tensor> {
        if !self.store.is_finite() {
            return Err(Error::NonFinite("classifier parameters".into()));
        }
        let x = stack_gaits(&[gait])?;
        let head = self.config.head;
        let affect = match head {
            Head::Hybrid => Some(self.normalize_affect(&self.affect_of(&[gait])?)?),
            Head::Baseline => None,
        };
        let mut cg = self.graph(
            &x,
            affect.as_ref(),
            None,
            head,
            Mode::Eval,
            Some(INPUT_NAME),
        )?;
        let mut bindings = self.store.bindings();
        bindings.insert(INPUT_NAME.to_string(), x);
        cg.graph.forward(cg.logits, &bindings)?;
        let mut seed = Tensor::zeros(&[1, NUM_CLASSES]);
        seed.set(&[0, target.index()], 1.0);
        let mut grads = cg.graph.backward_with(cg.logits, &seed, mode)?;
        let g = grads
            .remove(INPUT_NAME)
            .ok_or_else(|| Error::Unbound(INPUT_NAME.to_string()))?;
        let s = g.shape()[1..].to_vec();
        g.into_reshape(&s)
    }
}

/// Index of the largest logit; ties go to the lowest class index.
pub fn predict(logits: &[f64]) -> Result<Emotion> {
    if logits.len() != NUM_CLASSES {
        return Err(Error::Dimension {
            what: "logits",
            expected: NUM_CLASSES,
            found: logits.len(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    Ok(Emotion::from_index(best).expect("four classes"))
}
