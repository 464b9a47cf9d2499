//! Python module `p2pl`: point clouds, rigid transforms, the point-to-plane
//! forward solve, its analytic backward pass and the finite-difference check.
//! Points cross the boundary as sequences of `[x, y, z]`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nalgebra::{Matrix3, SVector, Vector3};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use p2pl_core::cloud::{self, estimate_normals as estimate, NormalSign};
use p2pl_core::correspond::nn_correspond;
use p2pl_core::geom::{compose, geodesic_angle, log_rotation, rodrigues};
use p2pl_core::grad::{self, Matrix12x3};
use p2pl_core::gradcheck::{check_instance, make_instance, FDConfig};
use p2pl_core::solver::{self, IcpOptions, Method, SolveOptions};
use p2pl_core::{AxisAngle, CorrespondenceSet, Error, GVector, PointCloud, RotationMatrix, ShapeKind};

create_exception!(p2pl, RegistrationError, PyException, "A solve or factorization failed.");

const ORTHO_TOL: f64 = 1e-6;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        Error::InvalidArgument(_) | Error::Parse { .. } | Error::InsufficientPoints { .. } | Error::MissingNormals => {
            PyValueError::new_err(e.to_string())
        }
        other => RegistrationError::new_err(format!("{}: {other}", other.code())),
    }
}

fn vecs(points: Vec<[f64; 3]>) -> Vec<Vector3<f64>> {
    points.into_iter().map(Vector3::from).collect()
}

fn lists(points: &[Vector3<f64>]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn rows3(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn block_rows(m: &Matrix12x3) -> [[f64; 3]; 12] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

#[pyclass(name = "RigidTransform", module = "p2pl", frozen, from_py_object)]
#[derive(Clone, Copy)]
pub struct PyRigidTransform(p2pl_core::RigidTransform);

#[pymethods]
impl PyRigidTransform {
    /// `rotation` must be orthonormal with determinant +1.
    #[new]
    #[pyo3(signature = (rotation=None, translation=[0.0; 3]))]
    fn new(rotation: Option<[[f64; 3]; 3]>, translation: [f64; 3]) -> PyResult<Self> {
        let r = rotation.map_or_else(Matrix3::identity, |m| Matrix3::from_fn(|i, j| m[i][j]));
        let rot = RotationMatrix::from_matrix_unchecked(r);
        if !(rot.orthogonality_error() <= ORTHO_TOL) || r.determinant() <= 0.0 {
            return Err(PyValueError::new_err("rotation is not a proper rotation matrix"));
        }
        Ok(Self(p2pl_core::RigidTransform::new(rot, Vector3::from(translation))))
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(p2pl_core::RigidTransform::identity())
    }

    /// Rotation by `|w|` radians about `w`, then translation.
    #[staticmethod]
    #[pyo3(signature = (w, translation=[0.0; 3]))]
    fn from_axis_angle(w: [f64; 3], translation: [f64; 3]) -> Self {
        Self(p2pl_core::RigidTransform::new(rodrigues(&AxisAngle(Vector3::from(w))), Vector3::from(translation)))
    }

    /// From the 12-vector `(vec(R) row-major, t)`, without re-orthogonalizing.
    #[staticmethod]
    fn from_g(g: [f64; 12]) -> Self {
        Self(p2pl_core::RigidTransform::from_g(&GVector(SVector::from(g))))
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        rows3(self.0.rotation.matrix())
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        self.0.translation.into()
    }

    #[allow(clippy::wrong_self_convention)]
    fn to_g(&self) -> [f64; 12] {
        self.0.to_g().0.into()
    }

    fn axis_angle(&self) -> [f64; 3] {
        log_rotation(&self.0.rotation).0.into()
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// `self ∘ inner`: `inner` is applied first.
    fn compose(&self, inner: &PyRigidTransform) -> Self {
        Self(compose(&self.0, &inner.0))
    }

    fn apply(&self, points: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
        lists(&vecs(points).iter().map(|p| self.0.apply_point(p)).collect::<Vec<_>>())
    }

    /// Geodesic rotation distance in radians.
    fn angle_to(&self, other: &PyRigidTransform) -> f64 {
        geodesic_angle(&self.0.rotation, &other.0.rotation)
    }

    fn __repr__(&self) -> String {
        format!("RigidTransform(rotation={:?}, translation={:?})", self.rotation(), self.translation())
    }
}

#[pyclass(name = "PointCloud", module = "p2pl", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyPointCloud(PointCloud);

#[pymethods]
impl PyPointCloud {
    #[new]
    #[pyo3(signature = (positions, normals=None))]
    fn new(positions: Vec<[f64; 3]>, normals: Option<Vec<[f64; 3]>>) -> PyResult<Self> {
        let cloud = match normals {
            Some(n) => PointCloud::with_normals(vecs(positions), vecs(n)),
            None => PointCloud::new(vecs(positions)),
        };
        cloud.map(Self).map_err(py_err)
    }

    /// Reads ASCII PLY or XYZN, chosen by extension.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        cloud::load(path).map(Self).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        cloud::save(path, &self.0).map_err(py_err)
    }

    #[getter]
    fn positions(&self) -> Vec<[f64; 3]> {
        lists(&self.0.positions)
    }

    #[getter]
    fn normals(&self) -> Option<Vec<[f64; 3]>> {
        self.0.normals.as_deref().map(lists)
    }

    fn transformed(&self, t: &PyRigidTransform) -> Self {
        Self(p2pl_core::geom::apply(&t.0, &self.0))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud(len={}, normals={})", self.0.len(), self.0.has_normals())
    }
}

/// Targets `yᵢ`, normals `nᵢ` and weights `ζᵢ` paired with source point `i`.
#[pyclass(name = "CorrespondenceSet", module = "p2pl", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyCorrespondenceSet(CorrespondenceSet);

#[pymethods]
impl PyCorrespondenceSet {
    #[new]
    #[pyo3(signature = (targets, normals, weights=None))]
    fn new(targets: Vec<[f64; 3]>, normals: Vec<[f64; 3]>, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let set = match weights {
            Some(w) => CorrespondenceSet::with_weights(vecs(targets), vecs(normals), w),
            None => CorrespondenceSet::new(vecs(targets), vecs(normals)),
        };
        set.map(Self).map_err(py_err)
    }

    /// Nearest target point for every source point, unit weights.
    #[staticmethod]
    fn nearest(source: &PyPointCloud, target: &PyPointCloud) -> PyResult<Self> {
        nn_correspond(&source.0, &target.0).map(Self).map_err(py_err)
    }

    #[getter]
    fn targets(&self) -> Vec<[f64; 3]> {
        lists(&self.0.targets)
    }

    #[getter]
    fn normals(&self) -> Vec<[f64; 3]> {
        lists(&self.0.normals)
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights.clone()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "SolveReport", module = "p2pl", frozen, get_all)]
pub struct PySolveReport {
    transform: PyRigidTransform,
    energy_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    condition_warning: bool,
}

impl From<solver::SolveReport> for PySolveReport {
    fn from(r: solver::SolveReport) -> Self {
        PySolveReport {
            transform: PyRigidTransform(r.transform),
            energy_trace: r.energy_trace,
            iterations: r.iterations,
            converged: r.converged,
            condition_warning: r.condition_warning,
        }
    }
}

/// Per-pair Jacobians `∂g/∂xᵢ`, `∂g/∂yᵢ`, `∂g/∂nᵢ` (12×3 each) and `∂g/∂ζᵢ`.
#[pyclass(name = "GradientBundle", module = "p2pl", frozen)]
pub struct PyGradientBundle(grad::GradientBundle);

#[pymethods]
impl PyGradientBundle {
    #[getter]
    fn d_g_d_x(&self) -> Vec<[[f64; 3]; 12]> {
        self.0.d_g_d_x.iter().map(block_rows).collect()
    }

    #[getter]
    fn d_g_d_y(&self) -> Vec<[[f64; 3]; 12]> {
        self.0.d_g_d_y.iter().map(block_rows).collect()
    }

    #[getter]
    fn d_g_d_n(&self) -> Vec<[[f64; 3]; 12]> {
        self.0.d_g_d_n.iter().map(block_rows).collect()
    }

    #[getter]
    fn d_g_d_zeta(&self) -> Vec<[f64; 12]> {
        self.0.d_g_d_zeta.iter().map(|c| (*c).into()).collect()
    }

    #[getter]
    fn penalty_lambda(&self) -> f64 {
        self.0.lambda
    }

    /// Per-point loss gradients for `dL/dg`, as a dict keyed `x`, `y`, `n`,
    /// `zeta`.
    fn chain<'py>(&self, py: Python<'py>, d_loss_d_g: [f64; 12]) -> PyResult<Bound<'py, PyDict>> {
        let pg = grad::chain_loss(&SVector::from(d_loss_d_g), &self.0);
        let d = PyDict::new(py);
        d.set_item("x", lists(&pg.x))?;
        d.set_item("y", lists(&pg.y))?;
        d.set_item("n", lists(&pg.n))?;
        d.set_item("zeta", pg.zeta)?;
        Ok(d)
    }
}

#[pyfunction]
fn synth_shape(kind: &str, n: usize, seed: u64) -> PyResult<PyPointCloud> {
    let kind: ShapeKind = kind.parse().map_err(py_err)?;
    cloud::synth_shape(kind, n, seed).map(PyPointCloud).map_err(py_err)
}

/// PCA normals over `k` neighbours; random signs when `seed` is given,
/// outward-facing otherwise.
#[pyfunction]
#[pyo3(signature = (cloud, k, seed=None))]
fn estimate_normals(cloud: &PyPointCloud, k: usize, seed: Option<u64>) -> PyResult<PyPointCloud> {
    let sign = seed.map_or(NormalSign::Outward, NormalSign::Random);
    estimate(&cloud.0, k, sign).map(|e| PyPointCloud(e.cloud)).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (corr, source, n_iters=solver::DEFAULT_ITERS, damping=0.0))]
fn register_p2pl(
    py: Python<'_>,
    corr: &PyCorrespondenceSet,
    source: &PyPointCloud,
    n_iters: usize,
    damping: f64,
) -> PyResult<PySolveReport> {
    py.detach(|| solver::register_p2pl(&corr.0, &source.0, n_iters, &SolveOptions { damping }))
        .map(Into::into)
        .map_err(py_err)
}

#[pyfunction]
fn register_procrustes(corr: &PyCorrespondenceSet, source: &PyPointCloud) -> PyResult<PyRigidTransform> {
    solver::register_procrustes(&corr.0, &source.0).map(PyRigidTransform).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (source, target, method="p2pl", max_outer=30, inner_iters=solver::DEFAULT_ITERS, weights=None, damping=0.0))]
#[allow(clippy::too_many_arguments)]
fn icp(
    py: Python<'_>,
    source: &PyPointCloud,
    target: &PyPointCloud,
    method: &str,
    max_outer: usize,
    inner_iters: usize,
    weights: Option<Vec<f64>>,
    damping: f64,
) -> PyResult<PySolveReport> {
    let method: Method = method.parse().map_err(py_err)?;
    let opts = IcpOptions { method, max_outer, inner_iters, weights, damping };
    py.detach(|| solver::icp(&source.0, &target.0, &opts)).map(Into::into).map_err(py_err)
}

/// Jacobians of the solved transform with respect to every input.
#[pyfunction]
fn backward(
    py: Python<'_>,
    corr: &PyCorrespondenceSet,
    source: &PyPointCloud,
    transform: &PyRigidTransform,
) -> PyResult<PyGradientBundle> {
    py.detach(|| grad::backward(&corr.0, &source.0, &transform.0.to_g())).map(PyGradientBundle).map_err(py_err)
}

/// `(‖RᵀR_gt − I‖² + ‖t − t_gt‖², dL/dg)`.
#[pyfunction]
fn rigid_motion_loss(est: &PyRigidTransform, gt: &PyRigidTransform) -> (f64, [f64; 12]) {
    let (l, d) = grad::rigid_motion_loss(&est.0.to_g(), &gt.0);
    (l, d.into())
}

/// Relative MSE between analytic and finite-difference loss gradients on
/// one seeded instance, per input kind plus `all`.
#[pyfunction]
#[pyo3(signature = (seed=0, n=64, n_iters=10, step=1e-5))]
fn gradcheck<'py>(py: Python<'py>, seed: u64, n: usize, n_iters: usize, step: f64) -> PyResult<Bound<'py, PyDict>> {
    let cfg = FDConfig { step, n_iters_forward: n_iters, ..FDConfig::default() };
    let rep = py.detach(|| make_instance(seed, n).and_then(|inst| check_instance(&inst, &cfg))).map_err(py_err)?;
    let d = PyDict::new(py);
    for k in &rep.per_kind {
        d.set_item(k.kind.to_string(), k.rel_mse)?;
    }
    d.set_item("all", rep.rel_mse)?;
    Ok(d)
}

#[pymodule]
fn p2pl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRigidTransform>()?;
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyCorrespondenceSet>()?;
    m.add_class::<PySolveReport>()?;
    m.add_class::<PyGradientBundle>()?;
    m.add("RegistrationError", m.py().get_type::<RegistrationError>())?;
    m.add_function(wrap_pyfunction!(synth_shape, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_normals, m)?)?;
    m.add_function(wrap_pyfunction!(register_p2pl, m)?)?;
    m.add_function(wrap_pyfunction!(register_procrustes, m)?)?;
    m.add_function(wrap_pyfunction!(icp, m)?)?;
    m.add_function(wrap_pyfunction!(backward, m)?)?;
    m.add_function(wrap_pyfunction!(rigid_motion_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
