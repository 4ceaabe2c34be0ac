//! Parametric walk cycles for the four emotion classes.
//!
//! Class styles are caricatures picked to be separable by posture and
//! movement cues (speed, stride, arm swing, trunk lean, head drop). They are
//! a stand-in dataset, not a model of real emotional gait.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::gait::{Emotion, GaitSequence, DEFAULT_FRAMES, DEFAULT_FRAME_RATE};
use crate::rng::{normal, substream, Rng, Stream};
use crate::skeleton::{joint::*, NUM_JOINTS};

#[derive(Clone, Debug, PartialEq)]
pub struct EmotionStyleParams {
    /// Distance covered per full gait cycle, meters.
    pub stride_length: f64,
    /// Gait cycles per second, Hz.
    pub cadence: f64,
    /// Peak shoulder swing angle, radians.
    pub arm_swing: f64,
    /// Forward lean of the trunk, radians.
    pub torso_inclination: f64,
    /// Head lowering relative to the neck, meters.
    pub head_drop: f64,
    /// Forward root speed, m/s.
    pub speed: f64,
    /// Standard deviation of per-coordinate Gaussian jitter, meters.
    pub noise_sigma: f64,
}

impl EmotionStyleParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.stride_length,
            self.cadence,
            self.arm_swing,
            self.torso_inclination,
            self.head_drop,
            self.speed,
            self.noise_sigma,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("style values must be finite".into()));
        }
        if self.cadence <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "cadence {} must be positive",
                self.cadence
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise sigma {} is negative",
                self.noise_sigma
            )));
        }
        if self.stride_length < 0.0 {
            return Err(Error::InvalidArgument("stride length is negative".into()));
        }
        Ok(())
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }
}

/// Default style per class. Happy and angry walk fast with long strides and
/// an erect trunk; sad walks slowly with short strides, a collapsed trunk and
/// a dropped head.
pub fn default_styles() -> BTreeMap<Emotion, EmotionStyleParams> {
    let style = |stride: f64, cadence: f64, arm, incl, head| EmotionStyleParams {
        stride_length: stride,
        cadence,
        arm_swing: arm,
        torso_inclination: incl,
        head_drop: head,
        speed: stride * cadence,
        noise_sigma: 0.01,
    };
    BTreeMap::from([
        (Emotion::Angry, style(1.6, 1.25, 0.45, 0.15, 0.0)),
        (Emotion::Neutral, style(1.3, 0.8, 0.3, 0.04, 0.02)),
        (Emotion::Happy, style(1.5, 1.0, 0.65, -0.04, 0.0)),
        (Emotion::Sad, style(0.9, 0.625, 0.1, 0.35, 0.12)),
    ])
}

/// Synthesize a walk at the default 25 Hz frame rate.
pub fn synth_walk(
    style: &EmotionStyleParams,
    label: Option<Emotion>,
    frames: usize,
    seed: u64,
) -> Result<GaitSequence> {
    synth_walk_at(style, label, frames, DEFAULT_FRAME_RATE, seed)
}

/// Synthesize a walk in the canonical frame (facing +z, left is +x). The seed
/// fixes the starting phase and the jitter.
pub fn synth_walk_at(
    style: &EmotionStyleParams,
    label: Option<Emotion>,
    frames: usize,
    frame_rate: f64,
    seed: u64,
) -> Result<GaitSequence> {
    style.validate()?;
    if frames < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 frames, got {}",
            frames
        )));
    }
    let mut rng = substream(seed, Stream::Synth, 0);
    let phase0 = rng.random_range(0.0..2.0 * PI);
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let secs = t as f64 / frame_rate;
        let phase = 2.0 * PI * style.cadence * secs + phase0;
        let mut pose = pose_at(style, phase);
        for p in &mut pose {
            p[2] += style.speed * secs;
        }
        if style.noise_sigma > 0.0 {
            for p in &mut pose {
                for c in p.iter_mut() {
                    *c += style.noise_sigma * normal(&mut rng);
                }
            }
        }
        out.push(pose);
    }
    GaitSequence::from_frames(&out, frame_rate, label)
}

/// Root-relative pose at gait phase `phase` (radians). The left leg and the
/// right arm share a phase; the right leg and left arm are offset by π.
fn pose_at(s: &EmotionStyleParams, phase: f64) -> Vec<[f64; 3]> {
    let mut p = vec![[0.0; 3]; NUM_JOINTS];
    let bob = 0.02 * (2.0 * phase).cos();
    let root = [0.0, 1.0 + bob, 0.0];
    p[ROOT] = root;

    let (sin_i, cos_i) = s.torso_inclination.sin_cos();
    let trunk =
        |h: f64, lateral: f64| [root[0] + lateral, root[1] + h * cos_i, root[2] + h * sin_i];
    p[SPINE] = trunk(0.25, 0.0);
    p[NECK] = trunk(0.5, 0.0);
    p[HEAD] = {
        let n = p[NECK];
        [
            n[0],
            n[1] + 0.2 * cos_i - s.head_drop,
            n[2] + 0.2 * sin_i + 0.5 * s.head_drop,
        ]
    };
    p[L_SHOULDER] = trunk(0.45, 0.2);
    p[R_SHOULDER] = trunk(0.45, -0.2);

    let bend = 0.2 + 0.5 * s.arm_swing;
    let arm = |shoulder: [f64; 3], arm_phase: f64| {
        let a = s.arm_swing * arm_phase.sin();
        let elbow = [
            shoulder[0],
            shoulder[1] - 0.28 * a.cos(),
            shoulder[2] + 0.28 * a.sin(),
        ];
        let f = a + bend;
        let hand = [
            elbow[0],
            elbow[1] - 0.27 * f.cos(),
            elbow[2] + 0.27 * f.sin(),
        ];
        (elbow, hand)
    };
    (p[L_ELBOW], p[L_HAND]) = arm(p[L_SHOULDER], phase + PI);
    (p[R_ELBOW], p[R_HAND]) = arm(p[R_SHOULDER], phase);

    let reach = s.stride_length / 4.0;
    let lift = 0.08 * (s.stride_length / 1.4).min(1.5);
    let leg = |lateral: f64, leg_phase: f64| {
        let hip = [lateral, root[1] - 0.05, root[2]];
        let swing = leg_phase.cos().max(0.0);
        let foot = [
            lateral,
            0.06 + lift * swing,
            root[2] + reach * leg_phase.sin(),
        ];
        let knee = [
            lateral,
            0.5 * (hip[1] + foot[1]),
            0.5 * (hip[2] + foot[2]) + 0.04 + 0.06 * swing,
        ];
        (hip, knee, foot)
    };
    (p[L_HIP], p[L_KNEE], p[L_FOOT]) = leg(0.1, phase);
    (p[R_HIP], p[R_KNEE], p[R_FOOT]) = leg(-0.1, phase + PI);
    p
}

/// Options for [`synth_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub frames: usize,
    pub frame_rate: f64,
    pub noise_sigma: f64,
    /// Relative per-gait perturbation of every style parameter.
    pub style_jitter: f64,
    /// Apply a random heading, subject scale and floor offset to every gait,
    /// as if captured from a different viewpoint.
    pub random_view: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            frames: DEFAULT_FRAMES,
            frame_rate: DEFAULT_FRAME_RATE,
            noise_sigma: 0.01,
            style_jitter: 0.05,
            random_view: true,
        }
    }
}

fn jitter(v: f64, rel: f64, rng: &mut Rng) -> f64 {
    if rel == 0.0 {
        v
    } else {
        v * rng.random_range(1.0 - rel..=1.0 + rel)
    }
}

/// `n_per_class` labeled gaits per emotion, ordered by class then index.
pub fn synth_dataset(
    n_per_class: usize,
    opts: &SynthOptions,
    seed: u64,
) -> Result<Vec<GaitSequence>> {
    let styles = default_styles();
    let mut out = Vec::with_capacity(4 * n_per_class);
    for (class, base) in &styles {
        for i in 0..n_per_class {
            let index = (class.index() as u64) << 32 | i as u64;
            let mut rng = substream(seed, Stream::Synth, index + 1);
            let r = opts.style_jitter;
            let cadence = jitter(base.cadence, r, &mut rng);
            let stride = jitter(base.stride_length, r, &mut rng);
            let style = EmotionStyleParams {
                stride_length: stride,
                cadence,
                arm_swing: jitter(base.arm_swing, r, &mut rng),
                torso_inclination: jitter(base.torso_inclination, r, &mut rng),
                head_drop: jitter(base.head_drop, r, &mut rng),
                speed: stride * cadence,
                noise_sigma: opts.noise_sigma,
            };
            let walk_seed: u64 = rng.random();
            let gait = synth_walk_at(
                &style,
                Some(*class),
                opts.frames,
                opts.frame_rate,
                walk_seed,
            )?;
            let gait = if opts.random_view {
                let yaw = rng.random_range(-PI..PI);
                let scale = rng.random_range(0.9..1.1);
                let (dx, dz) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                let (sy, cy) = f64::sin_cos(yaw);
                gait.map_points(|p| {
                    [
                        scale * (cy * p[0] + sy * p[2]) + dx,
                        scale * p[1],
                        scale * (-sy * p[0] + cy * p[2]) + dz,
                    ]
                })
            } else {
                gait
            };
            out.push(gait);
        }
    }
    Ok(out)
}
