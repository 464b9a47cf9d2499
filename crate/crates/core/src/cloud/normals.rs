//! PCA normal estimation over k-nearest neighbourhoods.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rayon::prelude::*;

use super::PointCloud;
use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::linalg::sym_eigen3;
use crate::rng;

/// How the sign of each estimated normal is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalSign {
    /// Independent seeded coin flip per point.
    Random(u64),
    /// Pointing away from the cloud centroid.
    Outward,
}

#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    /// Points whose neighbourhood covariance has rank < 2.
    pub degenerate: Vec<usize>,
}

/// Normal of each point = smallest-eigenvalue eigenvector of the covariance
/// of its `k` nearest neighbours (the point itself included).
pub fn estimate_normals(cloud: &PointCloud, k: usize, sign: NormalSign) -> Result<NormalEstimate> {
    if k < 3 || k >= cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "need 3 <= k < N, got k = {k}, N = {}",
            cloud.len()
        )));
    }
    let tree = KdTree::new(&cloud.positions);
    let centroid = cloud.centroid();
    let results: Vec<(Vector3<f64>, bool)> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let p = cloud.positions[i];
            let nbrs = tree.knn(&p, k);
            let mean = nbrs.iter().map(|&(j, _)| cloud.positions[j]).sum::<Vector3<f64>>() / k as f64;
            let cov = nbrs.iter().fold(Matrix3::zeros(), |acc, &(j, _)| {
                let d = cloud.positions[j] - mean;
                acc + d * d.transpose()
            }) / k as f64;
            let eig = sym_eigen3(&cov);
            let degenerate = !(eig.values[1] > 1e-12 * eig.values[0].max(f64::MIN_POSITIVE));
            let mut n = eig.smallest().1;
            let flip = match sign {
                NormalSign::Random(seed) => rng::stream(seed, i as u64).random::<bool>(),
                NormalSign::Outward => n.dot(&(p - centroid)) < 0.0,
            };
            if flip {
                n = -n;
            }
            (n, degenerate)
        })
        .collect();
    let degenerate = results.iter().enumerate().filter(|(_, r)| r.1).map(|(i, _)| i).collect();
    let normals = results.into_iter().map(|(n, _)| n).collect();
    Ok(NormalEstimate {
        cloud: PointCloud::with_normals(cloud.positions.clone(), normals)?,
        degenerate,
    })
}
