//! Fréchet distance, classification metrics and saliency maps.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::affective::extract_affective;
use crate::autodiff::BackwardMode;
use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::gait::{Emotion, GaitSequence, NUM_CLASSES};
use crate::skeleton::SkeletonTopology;
use crate::tensor::Tensor;

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{} needs at least 2 samples, got {}",
            what,
            rows.len()
        )));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape(
            "fid",
            format!("{} rows must share a non-zero width", what),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} features", what)));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

/// Sample mean and unbiased covariance of the rows of `x`.
fn moments(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1.0);
    (mean, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians with the given moments:
/// `‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2 (Σ₁Σ₂)^½)`.
///
/// `Tr (Σ₁Σ₂)^½` is evaluated as `Tr (Σ₁^½ Σ₂ Σ₁^½)^½`, which has the same
/// eigenvalues and is symmetric; negative eigenvalues are clamped to zero.
pub fn frechet_distance(
    mu1: &DVector<f64>,
    s1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> f64 {
    let diff = mu1 - mu2;
    let r1 = sym_sqrt(s1);
    let inner = &r1 * s2 * &r1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    (diff.norm_squared() + s1.trace() + s2.trace() - 2.0 * tr_sqrt).max(0.0)
}

/// FID between two feature sets (one row per sample).
pub fn fid(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    let (x, g) = (to_matrix(real, "real")?, to_matrix(generated, "generated")?);
    if x.ncols() != g.ncols() {
        return Err(Error::Dimension {
            what: "feature width",
            expected: x.ncols(),
            found: g.ncols(),
        });
    }
    let (m1, s1) = moments(&x);
    let (m2, s2) = moments(&g);
    Ok(frechet_distance(&m1, &s1, &m2, &s2))
}

/// Affective vectors used as the default deterministic FID embedding.
pub fn affective_features(
    gaits: &[GaitSequence],
    topo: &SkeletonTopology,
) -> Result<Vec<Vec<f64>>> {
    gaits
        .iter()
        .map(|g| Ok(extract_affective(g, topo)?.values.to_vec()))
        .collect()
}

fn check_lengths(preds: &[Emotion], labels: &[Emotion]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no predictions".into()));
    }
    Ok(())
}

/// Fraction of predictions equal to the label.
pub fn accuracy(preds: &[Emotion], labels: &[Emotion]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// `(TP + TN) / TD` for one binary decision set.
pub fn binary_accuracy(tp: u64, tn: u64, total: u64) -> f64 {
    (tp + tn) as f64 / total as f64
}

/// One-vs-rest `(TP + TN) / TD` averaged over the four classes.
pub fn macro_accuracy(preds: &[Emotion], labels: &[Emotion]) -> Result<f64> {
    Ok(confusion(preds, labels)?.macro_accuracy())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    /// `counts[true][predicted]`.
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

pub fn confusion(preds: &[Emotion], labels: &[Emotion]) -> Result<ConfusionMatrix> {
    check_lengths(preds, labels)?;
    let mut m = ConfusionMatrix::default();
    for (p, l) in preds.iter().zip(labels) {
        m.counts[l.index()][p.index()] += 1;
    }
    Ok(m)
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Number of gaits of each true class.
    pub fn support(&self) -> [u64; NUM_CLASSES] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total() as f64
    }

    pub fn macro_accuracy(&self) -> f64 {
        let total = self.total();
        let mut acc = 0.0;
        for c in 0..NUM_CLASSES {
            let tp = self.counts[c][c];
            let predicted: u64 = (0..NUM_CLASSES).map(|r| self.counts[r][c]).sum();
            let actual: u64 = self.counts[c].iter().sum();
            let tn = total + tp - actual - predicted;
            acc += binary_accuracy(tp, tn, total);
        }
        acc / NUM_CLASSES as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(Emotion::ALL.iter().map(|e| e.as_str().to_string()));
        w.write_record(&header)?;
        for (e, row) in Emotion::ALL.iter().zip(self.counts) {
            let mut rec = vec![e.as_str().to_string()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(["x", "y", "z"][self.index()])
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::Config(format!(
                "axis must be x, y or z, got `{}`",
                other
            ))),
        }
    }
}

/// Per frame and joint gradient magnitudes along one axis, `[T, V]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub values: Tensor,
    pub target: Emotion,
    pub axis: Axis,
}

fn saliency(
    clf: &Classifier,
    gait: &GaitSequence,
    target: Emotion,
    axis: Axis,
    mode: BackwardMode,
) -> Result<SaliencyMap> {
    let g = clf.input_gradient(gait, target, mode)?;
    let (t, v) = (g.shape()[1], g.shape()[2]);
    let start = axis.index() * t * v;
    let values = Tensor::new(
        vec![t, v],
        g.data()[start..start + t * v]
            .iter()
            .map(|x| x.abs())
            .collect(),
    )?;
    Ok(SaliencyMap {
        values,
        target,
        axis,
    })
}

/// Saliency with guided ReLU gating.
pub fn guided_backprop_saliency(
    clf: &Classifier,
    gait: &GaitSequence,
    target: Emotion,
    axis: Axis,
) -> Result<SaliencyMap> {
    saliency(clf, gait, target, axis, BackwardMode::GuidedRelu)
}

/// Saliency from the ordinary gradient.
pub fn plain_saliency(
    clf: &Classifier,
    gait: &GaitSequence,
    target: Emotion,
    axis: Axis,
) -> Result<SaliencyMap> {
    saliency(clf, gait, target, axis, BackwardMode::Standard)
}

impl SaliencyMap {
    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.values.shape()[1]
    }

    /// One row per frame, one column per joint.
    pub fn write_csv<W: Write>(&self, out: W, joint_names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["frame".to_string()];
        header.extend(joint_names.iter().cloned());
        w.write_record(&header)?;
        for (t, row) in self.values.data().chunks(self.joints()).enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Binary 8-bit graymap, `V` pixels wide and `T` high, scaled so the
    /// largest entry is white.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        let max = self.values.max_abs();
        write!(out, "P5\n{} {}\n255\n", self.joints(), self.frames())?;
        let pixels: Vec<u8> = self
            .values
            .data()
            .iter()
            .map(|v| {
                if max > 0.0 {
                    (v / max * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect();
        out.write_all(&pixels)?;
        Ok(())
    }
}
