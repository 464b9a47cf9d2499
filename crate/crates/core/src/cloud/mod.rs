//! Point clouds with optional per-point unit normals, plus file formats,
//! synthetic shapes, normal estimation and the pair-generation protocol.

mod augment;
mod io;
mod normals;
mod synth;

pub use augment::{make_cpu_pair, partial_scan, RegistrationPair, SynthConfig};
pub use io::{load, load_ply, load_xyzn, save, save_ply, save_xyzn, format_sig9};
pub use normals::{estimate_normals, NormalEstimate, NormalSign};
pub use synth::{synth_shape, ShapeKind};

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Tolerance on stored normal length.
pub const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vector3<f64>>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("point cloud must contain at least one point".into()));
        }
        if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("non-finite position".into()));
        }
        Ok(PointCloud { positions, normals: None })
    }

    pub fn with_normals(positions: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        let mut cloud = PointCloud::new(positions)?;
        if normals.len() != cloud.len() {
            return Err(Error::InvalidArgument(format!(
                "{} normals for {} points",
                normals.len(),
                cloud.len()
            )));
        }
        if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > UNIT_TOL) {
            return Err(Error::InvalidArgument(format!("normal {i} is not unit length")));
        }
        cloud.normals = Some(normals);
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn normals_or_err(&self) -> Result<&[Vector3<f64>]> {
        self.normals.as_deref().ok_or(Error::MissingNormals)
    }

    /// Cloud restricted to `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            normals: self.normals.as_ref().map(|ns| indices.iter().map(|&i| ns[i]).collect()),
        }
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.positions.iter().sum::<Vector3<f64>>() / self.len() as f64
    }

    /// Largest distance from the centroid.
    pub fn bounding_radius(&self) -> f64 {
        let c = self.centroid();
        self.positions.iter().map(|p| (p - c).norm()).fold(0.0, f64::max)
    }

    /// Concatenates clouds; normals survive only if every part has them.
    pub fn concat(parts: &[PointCloud]) -> PointCloud {
        let positions = parts.iter().flat_map(|c| c.positions.iter().copied()).collect();
        let normals = parts
            .iter()
            .map(|c| c.normals.as_ref())
            .collect::<Option<Vec<_>>>()
            .map(|ns| ns.into_iter().flatten().copied().collect());
        PointCloud { positions, normals }
    }
}
