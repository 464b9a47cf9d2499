//! Correspondence sets: nearest-neighbour pairing for classic ICP, and
//! pointer construction from caller-supplied score matrices (softmax soft
//! pointers with normal-tensor averaging, Gumbel-max hard assignments,
//! reliability weights).

use std::io::Read;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rayon::prelude::*;

use crate::cloud::{PointCloud, UNIT_TOL};
use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::kdtree::KdTree;
use crate::linalg::{sym_eigen3, CompensatedSum};
use crate::rng;

/// Scores are clamped here before exponentiation.
pub const EXP_CLAMP: f64 = 80.0;
/// Eigenvalue gap under which a tensor's principal direction is flagged.
pub const TENSOR_GAP_TOL: f64 = 1e-9;

/// For each source index: pointed target position, unit normal, weight ζ.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub targets: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

impl CorrespondenceSet {
    /// Unit weights.
    pub fn new(targets: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        let n = targets.len();
        Self::with_weights(targets, normals, vec![1.0; n])
    }

    pub fn with_weights(
        targets: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if targets.len() != normals.len() || targets.len() != weights.len() {
            return Err(Error::InvalidArgument("correspondence arrays differ in length".into()));
        }
        if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > UNIT_TOL) {
            return Err(Error::InvalidArgument(format!("correspondence normal {i} is not unit length")));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::InvalidArgument("at least one weight must be positive".into()));
        }
        Ok(CorrespondenceSet { targets, normals, weights })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        let c = Self::with_weights(self.targets.clone(), self.normals.clone(), weights)?;
        *self = c;
        Ok(())
    }
}

/// Row-major N×M score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "score matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidArgument("score matrix contains NaN".into()));
        }
        Ok(ScoreMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self::new(rows, cols, data)
    }

    /// Header-free CSV, one row per source point.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            let width = *cols.get_or_insert(rec.len());
            if rec.len() != width {
                return Err(Error::Parse { line: i + 1, message: format!("expected {width} columns") });
            }
            for field in rec.iter() {
                let v = f64::from_str(field)
                    .map_err(|_| Error::Parse { line: i + 1, message: format!("invalid number '{field}'") })?;
                data.push(v);
            }
            rows += 1;
        }
        Self::new(rows, cols.unwrap_or(0), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Row-wise softmax, shifted by the row maximum.
    pub fn softmax_rows(&self) -> ScoreMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.rows {
            let row = self.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|u| (u - max).exp()).collect();
            let total = exps.iter().copied().collect::<CompensatedSum>().value();
            data.extend(exps.into_iter().map(|e| e / total));
        }
        ScoreMatrix { rows: self.rows, cols: self.cols, data }
    }
}

pub fn nn_indices(source: &PointCloud, target: &PointCloud) -> Vec<usize> {
    let tree = KdTree::new(&target.positions);
    source
        .positions
        .par_iter()
        .map(|p| tree.nearest(p).map(|(j, _)| j).unwrap_or(0))
        .collect()
}

/// Each source point paired with its Euclidean-nearest target point
/// (lowest index on ties), unit weights.
pub fn nn_correspond(source: &PointCloud, target: &PointCloud) -> Result<CorrespondenceSet> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidArgument("clouds must be nonempty".into()));
    }
    let tn = target.normals_or_err()?;
    let idx = nn_indices(source, target);
    CorrespondenceSet::new(
        idx.iter().map(|&j| target.positions[j]).collect(),
        idx.iter().map(|&j| tn[j]).collect(),
    )
}

#[derive(Debug, Clone)]
pub struct Pointers {
    pub corr: CorrespondenceSet,
    /// Rows whose averaged normal tensor has no well-defined top direction.
    pub degenerate: Vec<usize>,
}

/// `y_i = Σ_j c_ij y_j`, and `n_i` the principal eigenvector of the
/// averaged normal tensor `Σ_j c_ij n_j n_jᵀ`. `weights` rows are assumed
/// to be nonnegative and to sum to one.
pub fn pointers_from_weights(weights: &ScoreMatrix, target: &PointCloud) -> Result<Pointers> {
    if weights.cols() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "{} score columns for {} target points",
            weights.cols(),
            target.len()
        )));
    }
    let tn = target.normals_or_err()?;
    let rows: Vec<(Vector3<f64>, Vector3<f64>, bool)> = (0..weights.rows())
        .into_par_iter()
        .map(|i| {
            let mut y = Vector3::zeros();
            let mut s = Matrix3::zeros();
            for (j, &c) in weights.row(i).iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                y += target.positions[j] * c;
                s += tn[j] * tn[j].transpose() * c;
            }
            let eig = sym_eigen3(&s);
            let degenerate = eig.values[0] - eig.values[1] <= TENSOR_GAP_TOL;
            (y, eig.largest().1, degenerate)
        })
        .collect();
    let degenerate = rows.iter().enumerate().filter(|(_, r)| r.2).map(|(i, _)| i).collect();
    let (targets, normals): (Vec<_>, Vec<_>) = rows.into_iter().map(|(y, n, _)| (y, n)).unzip();
    Ok(Pointers { corr: CorrespondenceSet::new(targets, normals)?, degenerate })
}

/// Softmax soft pointers from raw scores.
pub fn soft_pointers(scores: &ScoreMatrix, target: &PointCloud) -> Result<Pointers> {
    pointers_from_weights(&scores.softmax_rows(), target)
}

/// Naive weighted average of normal vectors (no tensor), unnormalized.
/// Kept as the baseline that sign flips defeat.
pub fn average_normal_vectors(scores: &ScoreMatrix, target: &PointCloud) -> Result<Vec<Vector3<f64>>> {
    let tn = target.normals_or_err()?;
    let w = scores.softmax_rows();
    Ok((0..w.rows())
        .map(|i| w.row(i).iter().zip(tn).map(|(c, n)| n * *c).sum())
        .collect())
}

/// `u_ij = −β‖R x_i + t − y_j‖² + α`.
pub fn match_matrix(
    source: &PointCloud,
    target: &PointCloud,
    t: &RigidTransform,
    alpha: f64,
    beta: f64,
) -> Result<ScoreMatrix> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument("beta must be positive".into()));
    }
    let moved: Vec<_> = source.positions.iter().map(|p| t.apply_point(p)).collect();
    ScoreMatrix::from_fn(source.len(), target.len(), |i, j| {
        -beta * (moved[i] - target.positions[j]).norm_squared() + alpha
    })
}

/// One selected column per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardAssignment {
    pub selected: Vec<usize>,
    pub cols: usize,
}

impl HardAssignment {
    /// Dense one-hot weight rows.
    pub fn to_weights(&self) -> ScoreMatrix {
        let cols = self.cols;
        let sel = &self.selected;
        ScoreMatrix::from_fn(sel.len(), cols, |i, j| if sel[i] == j { 1.0 } else { 0.0 })
            .expect("nonempty assignment")
    }
}

/// `one-hot[argmax_j softmax((u_ij + q_ij)/τ)]` for a given noise matrix.
/// τ > 0 cannot change the argmax; it is validated and otherwise unused.
pub fn hard_weights_with_noise(scores: &ScoreMatrix, noise: &ScoreMatrix, tau: f64) -> Result<HardAssignment> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("tau must be positive".into()));
    }
    if noise.rows() != scores.rows() || noise.cols() != scores.cols() {
        return Err(Error::InvalidArgument("noise and score shapes differ".into()));
    }
    let selected = (0..scores.rows())
        .map(|i| argmax((0..scores.cols()).map(|j| (scores.get(i, j) + noise.get(i, j)) / tau)))
        .collect();
    Ok(HardAssignment { selected, cols: scores.cols() })
}

/// Standard Gumbel noise, row `i` drawn from the stream `seed ⊕ i`.
pub fn gumbel_noise(rows: usize, cols: usize, seed: u64) -> ScoreMatrix {
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let mut r = rng::stream(seed, i as u64);
        for _ in 0..cols {
            let u = 1e-12 + (1.0 - 2e-12) * r.random::<f64>();
            data.push(-(-u.ln()).ln());
        }
    }
    ScoreMatrix { rows, cols, data }
}

pub fn gumbel_hard_weights(scores: &ScoreMatrix, tau: f64, seed: u64) -> Result<HardAssignment> {
    hard_weights_with_noise(scores, &gumbel_noise(scores.rows(), scores.cols(), seed), tau)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, v) in values.enumerate() {
        if v > best.1 {
            best = (j, v);
        }
    }
    best.0
}

#[derive(Debug, Clone)]
pub struct Reliability {
    pub zeta: Vec<f64>,
    /// Rows whose weight underflowed to zero.
    pub zero_rows: Vec<usize>,
}

/// `ζ_i = Σ_j exp(min(u_ij, 80))`.
pub fn reliability_weights(scores: &ScoreMatrix) -> Reliability {
    let zeta: Vec<f64> = (0..scores.rows())
        .map(|i| scores.row(i).iter().map(|u| u.min(EXP_CLAMP).exp()).collect::<CompensatedSum>().value())
        .collect();
    let zero_rows = zeta.iter().enumerate().filter(|(_, z)| **z == 0.0).map(|(i, _)| i).collect();
    Reliability { zeta, zero_rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeypointOrder {
    /// Smallest saliency first.
    #[default]
    Ascending,
    Descending,
}

impl FromStr for KeypointOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asc" => Ok(KeypointOrder::Ascending),
            "desc" => Ok(KeypointOrder::Descending),
            other => Err(Error::InvalidArgument(format!("unknown keypoint order '{other}'"))),
        }
    }
}

/// Indices of the `k` extreme saliency values, stable on ties.
pub fn topk_keypoints(
    cloud: &PointCloud,
    feature_norms: &[f64],
    k: usize,
    order: KeypointOrder,
) -> Result<Vec<usize>> {
    if feature_norms.len() != cloud.len() || k > cloud.len() {
        return Err(Error::InvalidArgument("need one saliency per point and k <= N".into()));
    }
    let mut idx: Vec<usize> = (0..feature_norms.len()).collect();
    idx.sort_by(|&a, &b| {
        let c = feature_norms[a].total_cmp(&feature_norms[b]);
        match order {
            KeypointOrder::Ascending => c,
            KeypointOrder::Descending => c.reverse(),
        }
    });
    idx.truncate(k);
    Ok(idx)
}
