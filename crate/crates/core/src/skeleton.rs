//! Skeleton topology, normalized adjacency, similarity alignment and view
//! normalization.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::gait::GaitSequence;
use crate::tensor::Tensor;

/// Joint indices of [`default_topology`].
pub mod joint {
    pub const ROOT: usize = 0;
    pub const SPINE: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const L_SHOULDER: usize = 4;
    pub const L_ELBOW: usize = 5;
    pub const L_HAND: usize = 6;
    pub const R_SHOULDER: usize = 7;
    pub const R_ELBOW: usize = 8;
    pub const R_HAND: usize = 9;
    pub const L_HIP: usize = 10;
    pub const L_KNEE: usize = 11;
    pub const L_FOOT: usize = 12;
    pub const R_HIP: usize = 13;
    pub const R_KNEE: usize = 14;
    pub const R_FOOT: usize = 15;
}

/// Number of joints in the default skeleton.
pub const NUM_JOINTS: usize = 16;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "root",
    "spine",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_hand",
    "r_shoulder",
    "r_elbow",
    "r_hand",
    "l_hip",
    "l_knee",
    "l_foot",
    "r_hip",
    "r_knee",
    "r_foot",
];

/// Joint graph of a skeleton plus its canonical rest pose.
///
/// Coordinates are meters with `x` lateral (positive to the subject's left),
/// `y` up and `z` the walking direction.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonTopology {
    names: Vec<String>,
    edges: Vec<(usize, usize)>,
    rest_pose: Vec<[f64; 3]>,
}

impl SkeletonTopology {
    /// Edges are made undirected (`i < j`) and deduplicated; self-loops are dropped.
    pub fn new(
        names: Vec<String>,
        edges: &[(usize, usize)],
        rest_pose: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let v = names.len();
        if rest_pose.len() != v {
            return Err(Error::Dimension {
                what: "rest pose joints",
                expected: v,
                found: rest_pose.len(),
            });
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= v || b >= v {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) with {} joints",
                    a, b, v
                )));
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        Ok(SkeletonTopology {
            names,
            edges: set.into_iter().collect(),
            rest_pose,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn rest_pose(&self) -> &[[f64; 3]] {
        &self.rest_pose
    }

    pub fn degree(&self, j: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == j || b == j)
            .count()
    }

    /// First joint not reachable from joint 0, if any.
    fn unreachable_joint(&self) -> Option<usize> {
        let v = self.num_joints();
        if v == 0 {
            return None;
        }
        let mut seen = vec![false; v];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(j) = queue.pop_front() {
            for &(a, b) in &self.edges {
                let next = if a == j {
                    b
                } else if b == j {
                    a
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
        seen.iter().position(|s| !s)
    }

    pub fn is_connected(&self) -> bool {
        self.unreachable_joint().is_none()
    }
}

/// The 16-joint skeleton: head, neck, spine and root on the trunk, with
/// shoulder–elbow–hand arms and hip–knee–foot legs. 15 edges, a tree.
pub fn default_topology() -> SkeletonTopology {
    use joint::*;
    let edges = [
        (ROOT, SPINE),
        (SPINE, NECK),
        (NECK, HEAD),
        (NECK, L_SHOULDER),
        (L_SHOULDER, L_ELBOW),
        (L_ELBOW, L_HAND),
        (NECK, R_SHOULDER),
        (R_SHOULDER, R_ELBOW),
        (R_ELBOW, R_HAND),
        (ROOT, L_HIP),
        (L_HIP, L_KNEE),
        (L_KNEE, L_FOOT),
        (ROOT, R_HIP),
        (R_HIP, R_KNEE),
        (R_KNEE, R_FOOT),
    ];
    let rest = vec![
        [0.0, 1.00, 0.0],
        [0.0, 1.25, 0.0],
        [0.0, 1.50, 0.0],
        [0.0, 1.70, 0.02],
        [0.20, 1.45, 0.0],
        [0.24, 1.17, 0.0],
        [0.26, 0.90, 0.02],
        [-0.20, 1.45, 0.0],
        [-0.24, 1.17, 0.0],
        [-0.26, 0.90, 0.02],
        [0.10, 0.95, 0.0],
        [0.10, 0.50, 0.02],
        [0.10, 0.06, 0.0],
        [-0.10, 0.95, 0.0],
        [-0.10, 0.50, 0.02],
        [-0.10, 0.06, 0.0],
    ];
    SkeletonTopology::new(
        JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        &edges,
        rest,
    )
    .expect("default topology is valid")
}

/// Row-stochastic adjacency `D⁻¹(A + I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix(Tensor);

impl AdjacencyMatrix {
    /// Wrap an arbitrary `V × V` matrix (for experiments such as `Â = I`).
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 2 || t.shape()[0] != t.shape()[1] {
            return Err(Error::shape("adjacency", format!("{:?}", t.shape())));
        }
        Ok(AdjacencyMatrix(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.shape()[0]
    }
}

pub fn build_adjacency(topo: &SkeletonTopology) -> Result<AdjacencyMatrix> {
    if let Some(j) = topo.unreachable_joint() {
        return Err(Error::Disconnected(j));
    }
    let v = topo.num_joints();
    let mut a = Tensor::identity(v);
    for &(i, j) in topo.edges() {
        a.set(&[i, j], 1.0);
        a.set(&[j, i], 1.0);
    }
    for row in a.data_mut().chunks_mut(v) {
        let deg: f64 = row.iter().sum();
        for x in row {
            *x /= deg;
        }
    }
    Ok(AdjacencyMatrix(a))
}

/// A similarity transform `p ↦ s·R·p + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation * Vector3::from(p) * self.scale + self.translation;
        [q.x, q.y, q.z]
    }
}

/// Least-squares similarity transform taking `src` onto `dst` (Umeyama),
/// with the reflection correction that keeps `det R = +1`.
pub fn umeyama_align(src: &[[f64; 3]], dst: &[[f64; 3]]) -> Result<Similarity> {
    if src.len() != dst.len() {
        return Err(Error::shape(
            "umeyama_align",
            format!("{} source vs {} target points", src.len(), dst.len()),
        ));
    }
    let n = src.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("{} points, need at least 3", n)));
    }
    let to_vec = |p: &[f64; 3]| Vector3::new(p[0], p[1], p[2]);
    let mu_s = src.iter().map(to_vec).sum::<Vector3<f64>>() / n as f64;
    let mu_d = dst.iter().map(to_vec).sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let cs = to_vec(s) - mu_s;
        let cd = to_vec(d) - mu_d;
        cov += cd * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov /= n as f64;
    var_s /= n as f64;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let (largest, middle) = (sv[order[0]], sv[order[1]]);
    if var_s <= f64::EPSILON || largest <= f64::EPSILON || middle <= 1e-12 * largest {
        return Err(Error::Degenerate(
            "point configuration is collinear or coincident".into(),
        ));
    }
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(order[2], order[2])] = -1.0;
    }
    let rotation = u * s * v_t;
    let trace_ds: f64 = (0..3).map(|i| sv[i] * s[(i, i)]).sum();
    let scale = trace_ds / var_s;
    let translation = mu_d - rotation * mu_s * scale;
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

/// Align a gait to the topology's rest pose using a single similarity
/// transform fitted on the first frame and applied to every frame.
pub fn view_normalize(gait: &GaitSequence, topo: &SkeletonTopology) -> Result<GaitSequence> {
    if gait.joints() != topo.num_joints() {
        return Err(Error::Dimension {
            what: "V",
            expected: topo.num_joints(),
            found: gait.joints(),
        });
    }
    let sim = umeyama_align(&gait.frame(0), topo.rest_pose())?;
    Ok(gait.map_points(|p| sim.apply(p)))
}
