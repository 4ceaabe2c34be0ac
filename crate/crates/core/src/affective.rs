//! Hand-designed posture and movement descriptors of a gait.

use std::io::Write;

use crate::error::{Error, Result};
use crate::gait::{dist, norm3, sub3, Emotion, GaitSequence};
use crate::skeleton::{joint::*, SkeletonTopology, JOINT_NAMES};

pub const NUM_AFFECTIVE: usize = 29;
pub const NUM_POSTURE: usize = 13;

pub const FEATURE_NAMES: [&str; NUM_AFFECTIVE] = [
    "bbox_volume",
    "neck_angle",
    "back_angle",
    "dist_root_head",
    "dist_root_lhand",
    "dist_root_rhand",
    "dist_root_lfoot",
    "dist_root_rfoot",
    "dist_hands",
    "area_neck_hands",
    "area_root_feet",
    "stride_length",
    "step_width",
    "speed_head",
    "speed_lhand",
    "speed_rhand",
    "speed_lfoot",
    "speed_rfoot",
    "accel_head",
    "accel_lhand",
    "accel_rhand",
    "accel_lfoot",
    "accel_rfoot",
    "jerk_head",
    "jerk_lhand",
    "jerk_rhand",
    "jerk_lfoot",
    "jerk_rfoot",
    "cycle_time",
];

const MOVING: [usize; 5] = [HEAD, L_HAND, R_HAND, L_FOOT, R_FOOT];
const STATIC_VARIANCE: f64 = 1e-18;

#[derive(Clone, Debug, PartialEq)]
pub struct AffectiveVector {
    pub values: [f64; NUM_AFFECTIVE],
    /// Set when some angle or ratio was undefined in at least one frame and
    /// was replaced by 0.
    pub degenerate: bool,
}

impl AffectiveVector {
    pub fn posture(&self) -> &[f64] {
        &self.values[..NUM_POSTURE]
    }

    pub fn movement(&self) -> &[f64] {
        &self.values[NUM_POSTURE..]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }
}

/// Angle at `b` of the triangle `a b c`, in `[0, π]`.
pub fn joint_angle(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Result<f64> {
    let (u, v) = (sub3(a, b), sub3(c, b));
    let (nu, nv) = (norm3(u), norm3(v));
    if nu < 1e-12 || nv < 1e-12 {
        return Err(Error::Degenerate("coincident joints in angle".into()));
    }
    let cos = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (nu * nv);
    Ok(cos.clamp(-1.0, 1.0).acos())
}

pub fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let (u, v) = (sub3(b, a), sub3(c, a));
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * norm3(cross)
}

/// Volume of the axis-aligned bounding box of a set of points.
pub fn bounding_volume(frame: &[[f64; 3]]) -> f64 {
    if frame.is_empty() {
        return 0.0;
    }
    (0..3)
        .map(|c| {
            let lo = frame.iter().map(|p| p[c]).fold(f64::INFINITY, f64::min);
            let hi = frame.iter().map(|p| p[c]).fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .product()
}

/// Mean magnitude of the `order`-th finite difference of a joint trajectory.
fn mean_difference(track: &[[f64; 3]], order: usize) -> f64 {
    let mut cur = track.to_vec();
    for _ in 0..order {
        cur = cur.windows(2).map(|w| sub3(w[1], w[0])).collect();
    }
    cur.iter().map(|d| norm3(*d)).sum::<f64>() / cur.len() as f64
}

/// Period in frames of the dominant oscillation of `signal`, from the first
/// autocorrelation peak after the first zero crossing. `None` for a constant
/// signal; `len` when no periodicity is found.
fn cycle_time(signal: &[f64]) -> Option<f64> {
    let n = signal.len();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let s: Vec<f64> = signal.iter().map(|x| x - mean).collect();
    let var = s.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if var < STATIC_VARIANCE {
        return None;
    }
    let r: Vec<f64> = (0..n)
        .map(|k| {
            let acc: f64 = (0..n - k).map(|t| s[t] * s[t + k]).sum();
            acc / ((n - k) as f64 * var)
        })
        .collect();
    let Some(first_negative) = r.iter().position(|&x| x < 0.0) else {
        return Some(n as f64);
    };
    for k in first_negative.max(1)..n.saturating_sub(1) {
        if r[k] > 0.0 && r[k] > r[k - 1] && r[k] >= r[k + 1] {
            let (a, b, c) = (r[k - 1], r[k], r[k + 1]);
            let denom = a - 2.0 * b + c;
            let shift = if denom.abs() > 1e-15 {
                0.5 * (a - c) / denom
            } else {
                0.0
            };
            return Some(k as f64 + shift.clamp(-0.5, 0.5));
        }
    }
    Some(n as f64)
}

fn check_topology(topo: &SkeletonTopology) -> Result<()> {
    if topo.num_joints() != JOINT_NAMES.len() {
        return Err(Error::Dimension {
            what: "V",
            expected: JOINT_NAMES.len(),
            found: topo.num_joints(),
        });
    }
    if topo.names().iter().zip(JOINT_NAMES).any(|(a, b)| a != b) {
        return Err(Error::InvalidArgument(
            "affective features need the default joint layout".into(),
        ));
    }
    Ok(())
}

/// The 29 affective features of a (view-normalized) gait. Posture features
/// are averaged over frames; movement features are in per-frame units.
pub fn extract_affective(gait: &GaitSequence, topo: &SkeletonTopology) -> Result<AffectiveVector> {
    check_topology(topo)?;
    if gait.joints() != topo.num_joints() {
        return Err(Error::Dimension {
            what: "V",
            expected: topo.num_joints(),
            found: gait.joints(),
        });
    }
    let t_len = gait.frames();
    if t_len < 4 {
        return Err(Error::InvalidArgument(format!(
            "affective features need at least 4 frames, got {}",
            t_len
        )));
    }
    let frames = gait.to_frames();
    let mut degenerate = false;
    let mut angle = |a, b, c| match joint_angle(a, b, c) {
        Ok(v) => v,
        Err(_) => {
            degenerate = true;
            0.0
        }
    };

    let mut posture = [0.0; NUM_POSTURE];
    let mut hip_width = 0.0;
    let mut foot_gap = 0.0;
    let mut stride: f64 = 0.0;
    for f in &frames {
        let row = [
            bounding_volume(f),
            angle(f[L_SHOULDER], f[NECK], f[R_SHOULDER]),
            angle(f[NECK], f[SPINE], f[ROOT]),
            dist(f[ROOT], f[HEAD]),
            dist(f[ROOT], f[L_HAND]),
            dist(f[ROOT], f[R_HAND]),
            dist(f[ROOT], f[L_FOOT]),
            dist(f[ROOT], f[R_FOOT]),
            dist(f[L_HAND], f[R_HAND]),
            triangle_area(f[NECK], f[R_HAND], f[L_HAND]),
            triangle_area(f[ROOT], f[L_FOOT], f[R_FOOT]),
        ];
        for (acc, v) in posture.iter_mut().zip(row) {
            *acc += v;
        }
        stride = stride.max((f[L_FOOT][2] - f[R_FOOT][2]).abs());
        hip_width += dist(f[L_HIP], f[R_HIP]);
        foot_gap += (f[L_FOOT][0] - f[R_FOOT][0]).abs();
    }
    let n = t_len as f64;
    for v in &mut posture[..11] {
        *v /= n;
    }
    posture[11] = stride;
    posture[12] = if hip_width > 1e-12 {
        foot_gap / hip_width
    } else {
        degenerate = true;
        0.0
    };

    let separation: Vec<f64> = frames.iter().map(|f| f[L_FOOT][2] - f[R_FOOT][2]).collect();
    let mut movement = [0.0; NUM_AFFECTIVE - NUM_POSTURE];
    for (i, &j) in MOVING.iter().enumerate() {
        let track: Vec<[f64; 3]> = frames.iter().map(|f| f[j]).collect();
        movement[i] = mean_difference(&track, 1);
        movement[5 + i] = mean_difference(&track, 2);
        movement[10 + i] = mean_difference(&track, 3);
    }
    movement[15] = cycle_time(&separation).unwrap_or(0.0);

    let mut values = [0.0; NUM_AFFECTIVE];
    values[..NUM_POSTURE].copy_from_slice(&posture);
    values[NUM_POSTURE..].copy_from_slice(&movement);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("affective features".into()));
    }
    Ok(AffectiveVector { values, degenerate })
}

pub fn extract_batch(
    gaits: &[GaitSequence],
    topo: &SkeletonTopology,
) -> Result<Vec<AffectiveVector>> {
    gaits.iter().map(|g| extract_affective(g, topo)).collect()
}

/// One CSV row per gait: the 29 named features followed by the label
/// (empty when unknown).
pub fn write_csv<W: Write>(out: W, rows: &[(AffectiveVector, Option<Emotion>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
    header.push("label");
    w.write_record(&header)?;
    for (v, label) in rows {
        let mut rec: Vec<String> = v.values.iter().map(|x| x.to_string()).collect();
        rec.push(label.map(|l| l.as_str().to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::default_topology;
    use crate::synth::{default_styles, synth_walk, synth_walk_at};
    use std::f64::consts::FRAC_PI_2;

    fn still(frames: usize) -> GaitSequence {
        let pose = default_topology().rest_pose().to_vec();
        GaitSequence::from_frames(&vec![pose; frames], 25.0, None).unwrap()
    }

    #[test]
    fn primitive_examples() {
        assert!(
            (joint_angle([1., 0., 0.], [0.; 3], [0., 1., 0.]).unwrap() - FRAC_PI_2).abs() < 1e-15
        );
        assert!(joint_angle([0.; 3], [0.; 3], [0., 1., 0.]).is_err());
        assert_eq!(triangle_area([0.; 3], [1., 0., 0.], [0., 1., 0.]), 0.5);
        let cube: Vec<[f64; 3]> = (0..8)
            .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
            .collect();
        assert_eq!(bounding_volume(&cube), 1.0);
    }

    #[test]
    fn static_gait_has_no_movement() {
        let g = still(10);
        let f = extract_affective(&g, &default_topology()).unwrap();
        assert!(f.movement().iter().all(|&v| v == 0.0));
        let one = extract_affective(&still(4), &default_topology()).unwrap();
        for (a, b) in f.posture().iter().zip(one.posture()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        assert!(f.posture()[0] > 0.0);
    }

    #[test]
    fn collinear_neck_and_hands_give_zero_area() {
        let mut pose = default_topology().rest_pose().to_vec();
        pose[NECK] = [0.0, 1.5, 0.0];
        pose[L_HAND] = [0.5, 1.5, 0.0];
        pose[R_HAND] = [-0.5, 1.5, 0.0];
        let g = GaitSequence::from_frames(&vec![pose; 5], 25.0, None).unwrap();
        let f = extract_affective(&g, &default_topology()).unwrap();
        assert_eq!(f.get("area_neck_hands"), Some(0.0));
    }

    #[test]
    fn coincident_joints_flag_degenerate() {
        let mut pose = default_topology().rest_pose().to_vec();
        pose[SPINE] = pose[NECK];
        let g = GaitSequence::from_frames(&vec![pose; 5], 25.0, None).unwrap();
        let f = extract_affective(&g, &default_topology()).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.get("back_angle"), Some(0.0));
    }

    #[test]
    fn too_few_frames() {
        assert!(extract_affective(&still(3), &default_topology()).is_err());
    }

    #[test]
    fn detects_cycle_length() {
        // 1.0 Hz at 25 Hz: 25-frame cycle.
        let s = default_styles()[&Emotion::Happy].clone().with_noise(0.0);
        let g = synth_walk(&s, None, 75, 4).unwrap();
        let f = extract_affective(&g, &default_topology()).unwrap();
        assert!(
            (f.get("cycle_time").unwrap() - 25.0).abs() < 0.5,
            "{:?}",
            f.get("cycle_time")
        );
    }

    #[test]
    fn doubled_frame_rate_halves_speed() {
        let s = default_styles()[&Emotion::Neutral].clone().with_noise(0.0);
        let a = extract_affective(
            &synth_walk_at(&s, None, 75, 25.0, 8).unwrap(),
            &default_topology(),
        )
        .unwrap();
        let b = extract_affective(
            &synth_walk_at(&s, None, 150, 50.0, 8).unwrap(),
            &default_topology(),
        )
        .unwrap();
        for i in 0..5 {
            let ratio = b.movement()[i] / a.movement()[i];
            assert!((ratio - 0.5).abs() < 0.02, "feature {} ratio {}", i, ratio);
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let f = extract_affective(&still(5), &default_topology()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &[(f, Some(Emotion::Sad))]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("bbox_volume,") && lines[0].ends_with(",label"));
        assert_eq!(lines[1].split(',').count(), 30);
        assert!(lines[1].ends_with(",sad"));
    }
}
