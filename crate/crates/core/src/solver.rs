//! Forward pass: point-to-plane energy, the linearized 6×6 system, iterative
//! accumulation of small motions, the weighted Procrustes baseline, and the
//! classic ICP loop around both.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::cloud::PointCloud;
use crate::correspond::{nn_indices, CorrespondenceSet};
use crate::error::{Error, Result};
use crate::geom::{apply, compose, log_rotation, rodrigues, AxisAngle, RigidTransform};
use crate::linalg::{CompensatedMatrix, CompensatedSum, PivotedCholesky};

pub type Matrix6 = SMatrix<f64, 6, 6>;
pub type Vector6 = SVector<f64, 6>;

/// Relative pivot tolerance of the 6×6 factorization.
pub const PIVOT_TOL: f64 = 1e-14;
/// Condition estimate above which a step is flagged.
pub const CONDITION_WARN: f64 = 1e12;
/// Step magnitude `‖a‖ + ‖t‖` treated as converged.
pub const STEP_TOL: f64 = 1e-10;
pub const DEFAULT_ITERS: usize = 10;

/// `A·(a; t) = b` with `a` the axis-angle part.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    pub a: Matrix6,
    pub b: Vector6,
}

fn check_len(corr: &CorrespondenceSet, source: &[Vector3<f64>]) -> Result<()> {
    if corr.len() != source.len() {
        return Err(Error::InvalidArgument(format!(
            "{} correspondences for {} source points",
            corr.len(),
            source.len()
        )));
    }
    Ok(())
}

/// `Σ ζᵢ ((R xᵢ + t − yᵢ)·nᵢ)²`.
pub fn energy(corr: &CorrespondenceSet, source: &PointCloud, t: &RigidTransform) -> Result<f64> {
    check_len(corr, &source.positions)?;
    Ok(energy_of(corr, &source.positions, t))
}

fn energy_of(corr: &CorrespondenceSet, xs: &[Vector3<f64>], t: &RigidTransform) -> f64 {
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let r = (t.apply_point(x) - corr.targets[i]).dot(&corr.normals[i]);
            corr.weights[i] * r * r
        })
        .collect::<CompensatedSum>()
        .value()
}

/// `A = Σ ζ v vᵀ`, `b = Σ ζ v ((y − x)·n)` with `v = (x × n; n)`.
pub fn assemble(corr: &CorrespondenceSet, source: &PointCloud) -> Result<LinearizedSystem> {
    check_len(corr, &source.positions)?;
    Ok(assemble_of(corr, &source.positions))
}

fn assemble_of(corr: &CorrespondenceSet, xs: &[Vector3<f64>]) -> LinearizedSystem {
    let mut a = CompensatedMatrix::<6, 6>::default();
    let mut b = CompensatedMatrix::<6, 1>::default();
    for (i, x) in xs.iter().enumerate() {
        let n = corr.normals[i];
        let c = x.cross(&n);
        let v = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
        let z = corr.weights[i];
        a.add(&(v * v.transpose() * z));
        b.add(&(v * (z * (corr.targets[i] - x).dot(&n))));
    }
    LinearizedSystem { a: a.value(), b: b.value() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub transform: RigidTransform,
    /// `‖a‖ + ‖t‖` of the solved increment.
    pub magnitude: f64,
    pub condition: f64,
}

impl Step {
    pub fn condition_warning(&self) -> bool {
        self.condition > CONDITION_WARN
    }
}

/// Solves the system (with `damping·I` added) and maps the axis-angle part
/// back through Rodrigues.
pub fn solve_step(sys: &LinearizedSystem, damping: f64) -> Result<Step> {
    let a = sys.a + Matrix6::identity() * damping;
    let chol = PivotedCholesky::factor(&a, PIVOT_TOL).map_err(|_| Error::SingularSystem { iteration: None })?;
    let sol = chol.solve_vec(&sys.b);
    let aa = Vector3::new(sol[0], sol[1], sol[2]);
    let t = Vector3::new(sol[3], sol[4], sol[5]);
    Ok(Step {
        transform: RigidTransform::new(rodrigues(&AxisAngle(aa)), t),
        magnitude: aa.norm() + t.norm(),
        condition: chol.condition_estimate(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveOptions {
    /// Added to the diagonal of every 6×6 system.
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub transform: RigidTransform,
    /// Energy before the first step and after every step.
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub condition_warning: bool,
}

/// Iterative accumulation: linearize at the current estimate, solve, and
/// fold the increment in as `R* ← Rᵢ R*`, `t* ← Rᵢ t* + tᵢ`.
pub fn register_p2pl(
    corr: &CorrespondenceSet,
    source: &PointCloud,
    n_iters: usize,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    check_len(corr, &source.positions)?;
    if n_iters == 0 {
        return Err(Error::InvalidArgument("n_iters must be >= 1".into()));
    }
    let mut total = RigidTransform::identity();
    let mut moved = source.positions.clone();
    let mut trace = vec![energy_of(corr, &moved, &total)];
    let mut warning = false;
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..n_iters {
        let sys = assemble_of(corr, &moved);
        let step = solve_step(&sys, opts.damping).map_err(|_| Error::SingularSystem { iteration: Some(k) })?;
        warning |= step.condition_warning();
        total = compose(&step.transform, &total);
        moved = source.positions.iter().map(|p| total.apply_point(p)).collect();
        trace.push(energy_of(corr, &source.positions, &total));
        iterations = k + 1;
        if step.magnitude < STEP_TOL {
            converged = true;
            break;
        }
    }
    Ok(SolveReport { transform: total, energy_trace: trace, iterations, converged, condition_warning: warning })
}

/// Weighted Kabsch: minimizes `Σ ζᵢ ‖R xᵢ + t − yᵢ‖²` in closed form.
pub fn register_procrustes(corr: &CorrespondenceSet, source: &PointCloud) -> Result<RigidTransform> {
    check_len(corr, &source.positions)?;
    procrustes_of(&source.positions, &corr.targets, &corr.weights)
}

fn procrustes_of(xs: &[Vector3<f64>], ys: &[Vector3<f64>], w: &[f64]) -> Result<RigidTransform> {
    let total: f64 = w.iter().copied().collect::<CompensatedSum>().value();
    let xc = xs.iter().zip(w).map(|(x, z)| x * *z).sum::<Vector3<f64>>() / total;
    let yc = ys.iter().zip(w).map(|(y, z)| y * *z).sum::<Vector3<f64>>() / total;
    let mut h = CompensatedMatrix::<3, 3>::default();
    for ((x, y), z) in xs.iter().zip(ys).zip(w) {
        h.add(&((x - xc) * (y - yc).transpose() * *z));
    }
    let svd = h.value().svd(true, true);
    let s = svd.singular_values;
    if !(s[1] > 1e-12 * s[0]) {
        return Err(Error::DegenerateConfiguration);
    }
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    // Re-project through the axis-angle map so the result carries the
    // rotation invariants of this crate exactly.
    let rotation = rodrigues(&log_rotation(&crate::geom::RotationMatrix::from_matrix_unchecked(r)));
    let t = yc - rotation.matrix() * xc;
    Ok(RigidTransform::new(rotation, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    PointToPoint,
    PointToPlane,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p2p" => Ok(Method::PointToPoint),
            "p2pl" => Ok(Method::PointToPlane),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpOptions {
    pub method: Method,
    pub max_outer: usize,
    pub inner_iters: usize,
    /// Per-source-point ζ; unit weights when absent.
    pub weights: Option<Vec<f64>>,
    pub damping: f64,
}

impl Default for IcpOptions {
    fn default() -> Self {
        IcpOptions { method: Method::PointToPlane, max_outer: 30, inner_iters: DEFAULT_ITERS, weights: None, damping: 0.0 }
    }
}

/// Alternates nearest-neighbour correspondence with a registration solve.
/// The energy trace holds the matched energy (point-to-point or
/// point-to-plane) before each outer step and after the last.
pub fn icp(source: &PointCloud, target: &PointCloud, opts: &IcpOptions) -> Result<SolveReport> {
    if opts.max_outer == 0 {
        return Err(Error::InvalidArgument("max_outer must be >= 1".into()));
    }
    let weights = match &opts.weights {
        Some(w) if w.len() != source.len() => {
            return Err(Error::InvalidArgument(format!("{} weights for {} source points", w.len(), source.len())))
        }
        Some(w) => w.clone(),
        None => vec![1.0; source.len()],
    };
    let target_normals = match opts.method {
        Method::PointToPlane => Some(target.normals_or_err()?),
        Method::PointToPoint => None,
    };
    let inner = SolveOptions { damping: opts.damping };
    let mut total = RigidTransform::identity();
    let mut trace = Vec::new();
    let mut warning = false;
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..opts.max_outer {
        let moved = apply(&total, source);
        let idx = nn_indices(&moved, target);
        let ys: Vec<_> = idx.iter().map(|&j| target.positions[j]).collect();
        let step = match target_normals {
            Some(tn) => {
                let corr = CorrespondenceSet {
                    targets: ys,
                    normals: idx.iter().map(|&j| tn[j]).collect(),
                    weights: weights.clone(),
                };
                let rep = register_p2pl(&corr, &moved, opts.inner_iters, &inner)
                    .map_err(|_| Error::SingularSystem { iteration: Some(k) })?;
                warning |= rep.condition_warning;
                if k == 0 {
                    trace.push(rep.energy_trace[0]);
                }
                trace.push(*rep.energy_trace.last().expect("nonempty trace"));
                rep.transform
            }
            None => {
                let step = procrustes_of(&moved.positions, &ys, &weights)?;
                let p2p = |t: &RigidTransform| {
                    moved
                        .positions
                        .iter()
                        .zip(&ys)
                        .zip(&weights)
                        .map(|((x, y), z)| z * (t.apply_point(x) - y).norm_squared())
                        .collect::<CompensatedSum>()
                        .value()
                };
                if k == 0 {
                    trace.push(p2p(&RigidTransform::identity()));
                }
                trace.push(p2p(&step));
                step
            }
        };
        total = compose(&step, &total);
        iterations = k + 1;
        if log_rotation(&step.rotation).angle() + step.translation.norm() < STEP_TOL {
            converged = true;
            break;
        }
    }
    Ok(SolveReport { transform: total, energy_trace: trace, iterations, converged, condition_warning: warning })
}
