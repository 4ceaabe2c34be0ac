use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of coordinates per joint.
pub const COORDS: usize = 3;
/// Number of emotion classes.
pub const NUM_CLASSES: usize = 4;
/// Default sequence length (3 s at 25 Hz).
pub const DEFAULT_FRAMES: usize = 75;
pub const DEFAULT_FRAME_RATE: f64 = 25.0;

/// Perceived emotion of a gait.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Angry,
    Neutral,
    Happy,
    Sad,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_CLASSES] = [
        Emotion::Angry,
        Emotion::Neutral,
        Emotion::Happy,
        Emotion::Sad,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Angry => "angry",
            Emotion::Neutral => "neutral",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
        }
    }

    pub fn one_hot(self) -> [f64; NUM_CLASSES] {
        let mut v = [0.0; NUM_CLASSES];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

/// A sequence of 3D joint positions, stored as a `C × T × V` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GaitSequence {
    positions: Tensor,
    frame_rate: f64,
    label: Option<Emotion>,
}

impl GaitSequence {
    /// Build from a `[3, T, V]` tensor.
    pub fn new(positions: Tensor, frame_rate: f64, label: Option<Emotion>) -> Result<Self> {
        if positions.rank() != 3 {
            return Err(Error::shape(
                "gait",
                format!("positions must be C×T×V, got {:?}", positions.shape()),
            ));
        }
        if positions.shape()[0] != COORDS {
            return Err(Error::Dimension {
                what: "C",
                expected: COORDS,
                found: positions.shape()[0],
            });
        }
        if positions.shape()[1] < 3 {
            return Err(Error::InvalidArgument(format!(
                "a gait needs at least 3 frames, got {}",
                positions.shape()[1]
            )));
        }
        if !positions.is_finite() {
            return Err(Error::NonFinite("gait positions".into()));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("frame rate {}", frame_rate)));
        }
        Ok(GaitSequence {
            positions,
            frame_rate,
            label,
        })
    }

    /// Build from per-frame joint lists (`frames[t][v] = [x, y, z]`).
    pub fn from_frames(
        frames: &[Vec<[f64; 3]>],
        frame_rate: f64,
        label: Option<Emotion>,
    ) -> Result<Self> {
        let t = frames.len();
        let v = frames.first().map_or(0, |f| f.len());
        if frames.iter().any(|f| f.len() != v) {
            return Err(Error::Format("frames have differing joint counts".into()));
        }
        let mut p = Tensor::zeros(&[COORDS, t, v]);
        for (ti, frame) in frames.iter().enumerate() {
            for (vi, xyz) in frame.iter().enumerate() {
                for c in 0..COORDS {
                    p.data_mut()[(c * t + ti) * v + vi] = xyz[c];
                }
            }
        }
        Self::new(p, frame_rate, label)
    }

    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    pub fn into_positions(self) -> Tensor {
        self.positions
    }

    pub fn frames(&self) -> usize {
        self.positions.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.positions.shape()[2]
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn label(&self) -> Option<Emotion> {
        self.label
    }

    pub fn with_label(mut self, label: Option<Emotion>) -> Self {
        self.label = label;
        self
    }

    pub fn joint(&self, t: usize, v: usize) -> [f64; 3] {
        let (tt, vv) = (self.frames(), self.joints());
        let d = self.positions.data();
        [
            d[t * vv + v],
            d[(tt + t) * vv + v],
            d[(2 * tt + t) * vv + v],
        ]
    }

    /// Joints of frame `t` as `V` points.
    pub fn frame(&self, t: usize) -> Vec<[f64; 3]> {
        (0..self.joints()).map(|v| self.joint(t, v)).collect()
    }

    pub fn to_frames(&self) -> Vec<Vec<[f64; 3]>> {
        (0..self.frames()).map(|t| self.frame(t)).collect()
    }

    /// Apply `f` to every joint position.
    pub fn map_points(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> GaitSequence {
        let frames: Vec<Vec<[f64; 3]>> = self
            .to_frames()
            .into_iter()
            .map(|fr| fr.into_iter().map(&f).collect())
            .collect();
        GaitSequence::from_frames(&frames, self.frame_rate, self.label)
            .expect("mapping preserves dimensions")
    }

    /// Mean per-frame joint displacement: the average of `‖v_i^t − v_i^{t−1}‖`
    /// over all joints and consecutive frame pairs.
    pub fn mean_displacement(&self) -> f64 {
        let (t, v) = (self.frames(), self.joints());
        let mut total = 0.0;
        for ti in 1..t {
            for vi in 0..v {
                let (a, b) = (self.joint(ti, vi), self.joint(ti - 1, vi));
                total += dist(a, b);
            }
        }
        total / ((t - 1) * v) as f64
    }
}

pub(crate) fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm3(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm3(sub3(a, b))
}
