//! Conditional VAE gait generator and its reconstruction losses.
//!
//! The encoder appends the one-hot label as constant channels, runs three
//! ST-GCN blocks and global pooling, and predicts the mean and log-variance of
//! a 32-dimensional latent code with two 1×1 convolutions. The decoder
//! appends the label to a latent sample, expands it with a 1×1 transposed
//! convolution, tiles it over every frame and joint, adds a learned
//! frame/joint embedding and runs three ST-GDCN blocks back to coordinates.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Expr, Graph};
use crate::error::{Error, Result};
use crate::gait::{Emotion, GaitSequence, COORDS, DEFAULT_FRAMES, DEFAULT_FRAME_RATE, NUM_CLASSES};
use crate::params::{uniform_init, Mode, NetBuilder, ParamStore};
use crate::rng::{normal_vec, stream, substream, Stream};
use crate::skeleton::{build_adjacency, AdjacencyMatrix, SkeletonTopology, NUM_JOINTS};
use crate::stgcn::{
    init_block, stgcn_block, stgdcn_block, StgcnLayerConfig, DEFAULT_TEMPORAL_KERNEL,
};
use crate::tensor::Tensor;

pub const LATENT_DIM: usize = 32;
pub const ENCODER_CHANNELS: [usize; 3] = [64, 32, 32];
pub const DECODER_CHANNELS: [usize; 3] = [32, 64, 3];
const DECODER_INPUT: usize = 32;
const GENERATE_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    mu: Vec<f64>,
    log_var: Vec<f64>,
}

impl LatentCode {
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        for (what, v) in [("mu", &mu), ("log_var", &log_var)] {
            if v.len() != LATENT_DIM {
                return Err(Error::Dimension {
                    what,
                    expected: LATENT_DIM,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("latent {}", what)));
            }
        }
        Ok(LatentCode { mu, log_var })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    /// `z = μ + exp(log σ² / 2) ⊙ noise`.
    pub fn sample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != LATENT_DIM {
            return Err(Error::Dimension {
                what: "noise",
                expected: LATENT_DIM,
                found: noise.len(),
            });
        }
        Ok(self
            .mu
            .iter()
            .zip(&self.log_var)
            .zip(noise)
            .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
            .collect())
    }

    /// `KL(N(μ, diag σ²) ‖ N(0, I))`.
    pub fn kl_divergence(&self) -> f64 {
        -0.5 * self
            .mu
            .iter()
            .zip(&self.log_var)
            .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
            .sum::<f64>()
    }
}

pub fn reparam_sample(code: &LatentCode, noise: &[f64]) -> Result<Vec<f64>> {
    code.sample(noise)
}

/// Weights of the push, pull and KL terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_d: f64,
    pub beta_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_c: 1.0,
            lambda_d: 1.0,
            beta_kl: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_c", self.lambda_c),
            ("lambda_d", self.lambda_d),
            ("beta_kl", self.beta_kl),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{} = {} must be non-negative",
                    name, v
                )));
            }
        }
        Ok(())
    }
}

/// Anchor frames of the pull loss: first, middle (`⌈T/2⌉`, 1-based) and last.
pub fn anchor_frames(frames: usize) -> [usize; 3] {
    [0, frames.div_ceil(2) - 1, frames - 1]
}

fn gait_dims(x: &Tensor, what: &'static str) -> Result<(usize, usize)> {
    if x.rank() != 3 || x.shape()[0] != COORDS {
        return Err(Error::shape(
            what,
            format!("expected 3×T×V, got {:?}", x.shape()),
        ));
    }
    Ok((x.shape()[1], x.shape()[2]))
}

fn pair_dims(real: &Tensor, synth: &Tensor, what: &'static str) -> Result<(usize, usize)> {
    let dims = gait_dims(real, what)?;
    if real.shape() != synth.shape() {
        return Err(Error::shape(
            what,
            format!("real {:?} vs synth {:?}", real.shape(), synth.shape()),
        ));
    }
    Ok(dims)
}

/// First difference along time: `C × (T−1) × V`.
pub fn joint_velocity(x: &Tensor) -> Result<Tensor> {
    temporal_difference(x, "joint_velocity")
}

/// Second difference along time: `C × (T−2) × V`.
pub fn joint_acceleration(x: &Tensor) -> Result<Tensor> {
    temporal_difference(&joint_velocity(x)?, "joint_acceleration")
}

fn temporal_difference(x: &Tensor, what: &'static str) -> Result<Tensor> {
    let (t, v) = gait_dims(x, what)?;
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "{} needs more frames, got {}",
            what, t
        )));
    }
    let mut out = Tensor::zeros(&[COORDS, t - 1, v]);
    for c in 0..COORDS {
        for ti in 0..t - 1 {
            for vi in 0..v {
                let d = x.get(&[c, ti + 1, vi]) - x.get(&[c, ti, vi]);
                out.set(&[c, ti, vi], d);
            }
        }
    }
    Ok(out)
}

/// `Σ_t ‖R_t − S_t‖²` over all joints and coordinates.
pub fn loss_original(real: &Tensor, synth: &Tensor) -> Result<f64> {
    pair_dims(real, synth, "loss_original")?;
    Ok(real
        .data()
        .iter()
        .zip(synth.data())
        .map(|(r, s)| (r - s).powi(2))
        .sum())
}

/// Squared mismatch of joint velocities plus joint accelerations.
pub fn loss_push(real: &Tensor, synth: &Tensor) -> Result<f64> {
    let (t, _) = pair_dims(real, synth, "loss_push")?;
    if t < 3 {
        return Err(Error::InvalidArgument(format!(
            "loss_push needs T ≥ 3, got {}",
            t
        )));
    }
    let vel = loss_original(&joint_velocity(real)?, &joint_velocity(synth)?)?;
    let acc = loss_original(&joint_acceleration(real)?, &joint_acceleration(synth)?)?;
    Ok(vel + acc)
}

/// Squared mismatch of positions relative to each anchor frame.
pub fn loss_pull(real: &Tensor, synth: &Tensor) -> Result<f64> {
    let (t, v) = pair_dims(real, synth, "loss_pull")?;
    if t < 3 {
        return Err(Error::InvalidArgument(format!(
            "loss_pull needs T ≥ 3, got {}",
            t
        )));
    }
    let mut total = 0.0;
    for w in anchor_frames(t) {
        for c in 0..COORDS {
            for ti in 0..t {
                for vi in 0..v {
                    let r = real.get(&[c, ti, vi]) - real.get(&[c, w, vi]);
                    let s = synth.get(&[c, ti, vi]) - synth.get(&[c, w, vi]);
                    total += (r - s).powi(2);
                }
            }
        }
    }
    Ok(total)
}

/// `ℒ_o + λ_c ℒ_c + λ_d ℒ_d`.
pub fn loss_reconstruction(real: &Tensor, synth: &Tensor, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(loss_original(real, synth)?
        + w.lambda_c * loss_push(real, synth)?
        + w.lambda_d * loss_pull(real, synth)?)
}

/// Reconstruction loss plus the weighted KL divergence of the posterior.
pub fn loss_total(
    real: &Tensor,
    synth: &Tensor,
    code: &LatentCode,
    w: &LossWeights,
) -> Result<f64> {
    Ok(loss_reconstruction(real, synth, w)? + w.beta_kl * code.kl_divergence())
}

/// Loss nodes for batched `[N, 3, T, V]` real and synthetic gaits, averaged
/// over the batch.
pub struct LossNodes {
    pub original: Expr,
    pub push: Expr,
    pub pull: Expr,
    pub reconstruction: Expr,
}

pub fn reconstruction_loss_graph(
    g: &mut Graph,
    real: Expr,
    synth: Expr,
    shape: [usize; 4],
    w: &LossWeights,
) -> LossNodes {
    let (batch, frames) = (shape[0], shape[2]);
    let inv = 1.0 / batch as f64;
    let d = g.sub(synth, real);
    let sq = g.sum_squares(d);
    let original = g.scale(sq, inv);

    let ahead = g.slice(d, 2, 1, frames - 1);
    let behind = g.slice(d, 2, 0, frames - 1);
    let vel = g.sub(ahead, behind);
    let ahead = g.slice(vel, 2, 1, frames - 2);
    let behind = g.slice(vel, 2, 0, frames - 2);
    let acc = g.sub(ahead, behind);
    let vs = g.sum_squares(vel);
    let acs = g.sum_squares(acc);
    let push_sum = g.add(vs, acs);
    let push = g.scale(push_sum, inv);

    let mut pull_sum = None;
    for w_frame in anchor_frames(frames) {
        let anchor = g.slice(d, 2, w_frame, 1);
        let tiled = g.repeat(anchor, &shape);
        let rel = g.sub(d, tiled);
        let s = g.sum_squares(rel);
        pull_sum = Some(match pull_sum {
            None => s,
            Some(acc) => g.add(acc, s),
        });
    }
    let pull = g.scale(pull_sum.expect("three anchors"), inv);

    let pc = g.scale(push, w.lambda_c);
    let pd = g.scale(pull, w.lambda_d);
    let r = g.add(original, pc);
    let reconstruction = g.add(r, pd);
    LossNodes {
        original,
        push,
        pull,
        reconstruction,
    }
}

/// Batch-mean KL divergence for `[N, LATENT_DIM]` mean and log-variance.
pub fn kl_graph(g: &mut Graph, mu: Expr, log_var: Expr, batch: usize) -> Expr {
    let e = g.exp(log_var);
    let m2 = g.mul(mu, mu);
    let a = g.add_scalar(log_var, 1.0);
    let b = g.sub(a, m2);
    let c = g.sub(b, e);
    let s = g.sum(c);
    g.scale(s, -0.5 / batch as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub frames: usize,
    pub joints: usize,
    pub temporal_kernel: usize,
    pub frame_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            frames: DEFAULT_FRAMES,
            joints: NUM_JOINTS,
            temporal_kernel: DEFAULT_TEMPORAL_KERNEL,
            frame_rate: DEFAULT_FRAME_RATE,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 3 {
            return Err(Error::Config(format!(
                "frames = {} must be at least 3",
                self.frames
            )));
        }
        if self.temporal_kernel.is_multiple_of(2) || self.temporal_kernel > 2 * self.frames {
            return Err(Error::Config(format!(
                "temporal kernel {} must be odd and at most 2T",
                self.temporal_kernel
            )));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        Ok(())
    }

    fn layers(&self, input: usize, channels: [usize; 3]) -> [StgcnLayerConfig; 3] {
        let k = self.temporal_kernel;
        [
            StgcnLayerConfig::new(input, channels[0]).kernel(k),
            StgcnLayerConfig::new(channels[0], channels[1]).kernel(k),
            StgcnLayerConfig::new(channels[1], channels[2]).kernel(k),
        ]
    }

    pub fn encoder_layers(&self) -> [StgcnLayerConfig; 3] {
        self.layers(COORDS + NUM_CLASSES, ENCODER_CHANNELS)
    }

    pub fn decoder_layers(&self) -> [StgcnLayerConfig; 3] {
        let [a, b, c] = self.layers(DECODER_INPUT, DECODER_CHANNELS);
        [a, b, c.linear_output()]
    }
}

/// Outputs of a training-time forward graph.
pub struct GeneratorGraph {
    pub graph: Graph,
    pub bn_nodes: Vec<(String, Expr)>,
    pub mu: Expr,
    pub log_var: Expr,
    pub output: Expr,
    pub losses: LossNodes,
    pub kl: Expr,
    pub total: Expr,
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    store: ParamStore,
    adj: AdjacencyMatrix,
}

const ENC_PREFIX: [&str; 3] = ["enc.l1", "enc.l2", "enc.l3"];
const DEC_PREFIX: [&str; 3] = ["dec.l1", "dec.l2", "dec.l3"];

fn one_hot_rows(labels: &[Emotion]) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), NUM_CLASSES]);
    for (i, l) in labels.iter().enumerate() {
        t.set(&[i, l.index()], 1.0);
    }
    t
}

fn stack(items: &[&Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.len() * items.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(Error::shape(
                "batch",
                format!("{:?} vs {:?}", t.shape(), first.shape()),
            ));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(shape, data)
}

/// Stack gaits into an `N × 3 × T × V` batch.
pub fn stack_gaits(gaits: &[&GaitSequence]) -> Result<Tensor> {
    let items: Vec<&Tensor> = gaits.iter().map(|g| g.positions()).collect();
    stack(&items)
}

fn split_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let n = t.shape()[0];
    let w = t.len() / n.max(1);
    t.data().chunks(w).map(<[f64]>::to_vec).collect()
}

impl Generator {
    /// Freshly initialized generator.
    pub fn new(config: GeneratorConfig, topo: &SkeletonTopology, seed: u64) -> Result<Self> {
        config.validate()?;
        if topo.num_joints() != config.joints {
            return Err(Error::Dimension {
                what: "V",
                expected: config.joints,
                found: topo.num_joints(),
            });
        }
        let mut rng = stream(seed, Stream::Init);
        let mut store = ParamStore::new();
        for (prefix, cfg) in ENC_PREFIX.iter().zip(config.encoder_layers()) {
            init_block(&mut store, prefix, &cfg, &mut rng)?;
        }
        let c = ENCODER_CHANNELS[2];
        for head in ["enc.mu", "enc.logvar"] {
            store.insert_param(
                format!("{head}.w"),
                uniform_init(&[LATENT_DIM, c, 1], c, &mut rng),
            );
            store.insert_param(format!("{head}.b"), Tensor::zeros(&[LATENT_DIM]));
        }
        let din = LATENT_DIM + NUM_CLASSES;
        store.insert_param(
            "dec.up.w",
            uniform_init(&[din, DECODER_INPUT, 1], din, &mut rng),
        );
        store.insert_param("dec.up.b", Tensor::zeros(&[DECODER_INPUT]));
        store.insert_param(
            "dec.pos",
            uniform_init(
                &[1, DECODER_INPUT, config.frames, config.joints],
                1,
                &mut rng,
            ),
        );
        for (prefix, cfg) in DEC_PREFIX.iter().zip(config.decoder_layers()) {
            init_block(&mut store, prefix, &cfg, &mut rng)?;
        }
        store.insert_param(
            "dec.offset",
            Tensor::zeros(&[NUM_CLASSES, COORDS * config.frames * config.joints]),
        );
        Self::from_parts(config, store, topo)
    }

    pub fn from_parts(
        config: GeneratorConfig,
        store: ParamStore,
        topo: &SkeletonTopology,
    ) -> Result<Self> {
        config.validate()?;
        let adj = build_adjacency(topo)?;
        if adj.size() != config.joints {
            return Err(Error::Dimension {
                what: "V",
                expected: config.joints,
                found: adj.size(),
            });
        }
        let pos = store.param("dec.pos")?;
        if pos.shape() != [1, DECODER_INPUT, config.frames, config.joints] {
            return Err(Error::shape(
                "generator",
                format!("dec.pos has shape {:?}", pos.shape()),
            ));
        }
        let offset = store.param("dec.offset")?;
        if offset.shape() != [NUM_CLASSES, COORDS * config.frames * config.joints] {
            return Err(Error::shape(
                "generator",
                format!("dec.offset has shape {:?}", offset.shape()),
            ));
        }
        Ok(Generator { config, store, adj })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn adjacency(&self) -> &AdjacencyMatrix {
        &self.adj
    }

    fn check_positions(&self, x: &Tensor) -> Result<usize> {
        let (t, v) = (self.config.frames, self.config.joints);
        if x.rank() != 4 || x.shape()[1..] != [COORDS, t, v] {
            return Err(Error::shape(
                "generator",
                format!("expected N×3×{}×{} input, got {:?}", t, v, x.shape()),
            ));
        }
        Ok(x.shape()[0])
    }

    /// Encoder nodes for a batch `x: [N, 3, T, V]`; returns `(μ, log σ²)`,
    /// each `[N, LATENT_DIM]`.
    pub fn encoder_graph(
        &self,
        b: &mut NetBuilder<'_>,
        x: Expr,
        labels: &[Emotion],
    ) -> Result<(Expr, Expr)> {
        let n = labels.len();
        let (t, v) = (self.config.frames, self.config.joints);
        let adj = b.graph.constant(self.adj.tensor().clone());
        let mut planes = Tensor::zeros(&[n, NUM_CLASSES, t, v]);
        for (i, l) in labels.iter().enumerate() {
            let start = (i * NUM_CLASSES + l.index()) * t * v;
            planes.data_mut()[start..start + t * v].fill(1.0);
        }
        let planes = b.graph.constant(planes);
        let mut h = b.graph.concat(&[x, planes], 1);
        for (prefix, cfg) in ENC_PREFIX.iter().zip(self.config.encoder_layers()) {
            h = stgcn_block(b, h, adj, prefix, &cfg)?;
        }
        let pooled = b.graph.mean_pool(h, &[2, 3]);
        let mut heads = Vec::with_capacity(2);
        for head in ["enc.mu", "enc.logvar"] {
            let w = b.param(&format!("{head}.w"));
            let bias = b.param(&format!("{head}.b"));
            let y = b.graph.temporal_conv(pooled, w, Some(bias));
            heads.push(b.graph.reshape(y, &[n, LATENT_DIM]));
        }
        Ok((heads[0], heads[1]))
    }

    /// Decoder nodes for latent samples `z: [N, LATENT_DIM]`; returns
    /// `[N, 3, T, V]` positions.
    pub fn decoder_graph(
        &self,
        b: &mut NetBuilder<'_>,
        z: Expr,
        labels: &[Emotion],
    ) -> Result<Expr> {
        let n = labels.len();
        let (t, v) = (self.config.frames, self.config.joints);
        let adj = b.graph.constant(self.adj.tensor().clone());
        let onehot = b.graph.constant(one_hot_rows(labels));
        let zc = b.graph.concat(&[z, onehot], 1);
        let zc = b.graph.reshape(zc, &[n, LATENT_DIM + NUM_CLASSES, 1, 1]);
        let w = b.param("dec.up.w");
        let bias = b.param("dec.up.b");
        let up = b.graph.temporal_conv_transpose(zc, w, Some(bias));
        let tiled = b.graph.repeat(up, &[n, DECODER_INPUT, t, v]);
        let pos = b.param("dec.pos");
        let pos = b.graph.repeat(pos, &[n, DECODER_INPUT, t, v]);
        let mut h = b.graph.add(tiled, pos);
        for (prefix, cfg) in DEC_PREFIX.iter().zip(self.config.decoder_layers()) {
            h = stgdcn_block(b, h, adj, prefix, &cfg)?;
        }
        let offset = b.param("dec.offset");
        let offset = b.graph.matmul(onehot, offset);
        let offset = b.graph.reshape(offset, &[n, COORDS, t, v]);
        Ok(b.graph.add(h, offset))
    }

    /// Full training graph: encode, sample with the given `noise: [N, 32]`,
    /// decode, and score against the input.
    pub fn training_graph(
        &self,
        positions: &Tensor,
        labels: &[Emotion],
        noise: &Tensor,
        weights: &LossWeights,
        mode: Mode,
    ) -> Result<GeneratorGraph> {
        weights.validate()?;
        let n = self.check_positions(positions)?;
        if labels.len() != n || noise.shape() != [n, LATENT_DIM] {
            return Err(Error::shape(
                "generator",
                format!(
                    "{} labels and noise {:?} for batch {}",
                    labels.len(),
                    noise.shape(),
                    n
                ),
            ));
        }
        let mut b = NetBuilder::new(&self.store, mode);
        let x = b.graph.constant(positions.clone());
        let (mu, log_var) = self.encoder_graph(&mut b, x, labels)?;
        let half = b.graph.scale(log_var, 0.5);
        let std = b.graph.exp(half);
        let eps = b.graph.constant(noise.clone());
        let spread = b.graph.mul(std, eps);
        let z = b.graph.add(mu, spread);
        let output = self.decoder_graph(&mut b, z, labels)?;
        let (mut graph, bn_nodes) = b.into_parts();
        let losses = reconstruction_loss_graph(
            &mut graph,
            x,
            output,
            [n, COORDS, self.config.frames, self.config.joints],
            weights,
        );
        let kl = kl_graph(&mut graph, mu, log_var, n);
        let klw = graph.scale(kl, weights.beta_kl);
        let total = graph.add(losses.reconstruction, klw);
        Ok(GeneratorGraph {
            graph,
            bn_nodes,
            mu,
            log_var,
            output,
            losses,
            kl,
            total,
        })
    }

    /// Eval-mode posterior for each gait.
    pub fn encode_batch(
        &self,
        gaits: &[&GaitSequence],
        labels: &[Emotion],
    ) -> Result<Vec<LatentCode>> {
        if gaits.len() != labels.len() {
            return Err(Error::InvalidArgument("one label per gait required".into()));
        }
        let x = stack_gaits(gaits)?;
        self.check_positions(&x)?;
        let mut b = NetBuilder::new(&self.store, Mode::Eval);
        let xe = b.graph.constant(x);
        let (mu, lv) = self.encoder_graph(&mut b, xe, labels)?;
        let both = b.graph.concat(&[mu, lv], 1);
        let (mut g, _) = b.into_parts();
        let out = g.forward(both, &self.store.bindings())?;
        split_rows(&out)
            .into_iter()
            .map(|row| LatentCode::new(row[..LATENT_DIM].to_vec(), row[LATENT_DIM..].to_vec()))
            .collect()
    }

    pub fn encode(&self, gait: &GaitSequence, label: Emotion) -> Result<LatentCode> {
        Ok(self.encode_batch(&[gait], &[label])?.remove(0))
    }

    /// Eval-mode decoding of latent samples.
    pub fn decode_batch(&self, zs: &[Vec<f64>], labels: &[Emotion]) -> Result<Vec<GaitSequence>> {
        if zs.len() != labels.len() || zs.is_empty() {
            return Err(Error::InvalidArgument(
                "one label per latent sample required".into(),
            ));
        }
        if let Some(z) = zs.iter().find(|z| z.len() != LATENT_DIM) {
            return Err(Error::Dimension {
                what: "z",
                expected: LATENT_DIM,
                found: z.len(),
            });
        }
        let z = Tensor::new(vec![zs.len(), LATENT_DIM], zs.concat())?;
        let mut b = NetBuilder::new(&self.store, Mode::Eval);
        let ze = b.graph.constant(z);
        let out = self.decoder_graph(&mut b, ze, labels)?;
        let (mut g, _) = b.into_parts();
        let y = g.forward(out, &self.store.bindings())?;
        let (t, v) = (self.config.frames, self.config.joints);
        split_rows(&y)
            .into_iter()
            .zip(labels)
            .map(|(row, l)| {
                GaitSequence::new(
                    Tensor::new(vec![COORDS, t, v], row)?,
                    self.config.frame_rate,
                    Some(*l),
                )
            })
            .collect()
    }

    pub fn decode(&self, z: &[f64], label: Emotion) -> Result<GaitSequence> {
        Ok(self.decode_batch(&[z.to_vec()], &[label])?.remove(0))
    }

    /// `count` gaits decoded from `z ~ N(0, I)`; sample `i` draws its noise
    /// from its own substream of `seed`.
    pub fn generate(&self, label: Emotion, count: usize, seed: u64) -> Result<Vec<GaitSequence>> {
        if count == 0 {
            return Err(Error::InvalidArgument("count must be at least 1".into()));
        }
        if !self.store.is_finite() {
            return Err(Error::NonFinite("generator parameters".into()));
        }
        let zs: Vec<Vec<f64>> = (0..count)
            .map(|i| normal_vec(&mut substream(seed, Stream::Noise, i as u64), LATENT_DIM))
            .collect();
        let mut out = Vec::with_capacity(count);
        for chunk in zs.chunks(GENERATE_CHUNK) {
            out.extend(self.decode_batch(chunk, &vec![label; chunk.len()])?);
        }
        Ok(out)
    }
}
