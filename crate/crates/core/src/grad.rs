//! Backward pass: Jacobians of the solved transform `g*` with respect to
//! every input, by implicit differentiation of the penalized energy
//! `Ê(g) = E(g) + λ‖RᵀR − I‖²_F`:
//!
//! ```text
//! ∂g*/∂p = −(∂²Ê/∂g²)⁻¹ · ∂²Ê/∂p∂g
//! ```
//!
//! `g` is the 12-vector of [`GVector`]. With `φᵢ = n̂ᵢ ⊙ x̂ᵢ` the residual
//! is `rᵢ = φᵢ·g − yᵢ·nᵢ`.
//!
//! The rotation returned by the forward solver is orthogonal to rounding, so
//! the least-squares λ is the clamped `0/0` case there. [`backward`] instead
//! uses the stiff-penalty limit: a large λ, with the Hessian evaluated at
//! the penalized minimizer that λ implies, a point `O(1/λ)` off the
//! manifold fixed by stationarity (`4λ R(RᵀR − I) = −∂E/∂R`).

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::correspond::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::geom::{GVector, RigidTransform};
use crate::linalg::{CompensatedMatrix, PivotedCholesky};

pub type Vector12 = SVector<f64, 12>;
pub type Matrix12 = SMatrix<f64, 12, 12>;
pub type Matrix12x3 = SMatrix<f64, 12, 3>;
pub type Matrix9 = SMatrix<f64, 9, 9>;

/// Penalty stiffness used by [`backward`], relative to the largest diagonal
/// entry of the data Hessian's rotation block.
pub const STIFFNESS_RATIO: f64 = 1e7;
/// Relative pivot tolerance of the 12×12 factorization.
pub const HESSIAN_PIVOT_TOL: f64 = 1e-14;
const LAMBDA_DENOM_MIN: f64 = 1e-24;

/// `x̂ = (x, x, x, 1, 1, 1)`.
pub fn x_hat(x: &Vector3<f64>) -> Vector12 {
    Vector12::from_fn(|k, _| if k < 9 { x[k % 3] } else { 1.0 })
}

/// `n̂ = (n₀, n₀, n₀, n₁, n₁, n₁, n₂, n₂, n₂, n₀, n₁, n₂)`.
pub fn n_hat(n: &Vector3<f64>) -> Vector12 {
    Vector12::from_fn(|k, _| if k < 9 { n[k / 3] } else { n[k - 9] })
}

/// `X̂ = (I₃ ⊗ x ; I₃)`, the derivative of `n̂ ⊙ x̂` with respect to `n`.
pub fn x_cap(x: &Vector3<f64>) -> Matrix12x3 {
    Matrix12x3::from_fn(|k, j| if k < 9 { if k / 3 == j { x[k % 3] } else { 0.0 } } else if k - 9 == j { 1.0 } else { 0.0 })
}

/// `R̂[3a+b][3d+c] = R[a][c]`: block row `a` repeats row `a` of `R`.
pub fn r_hat(r: &Matrix3<f64>) -> Matrix9 {
    Matrix9::from_fn(|i, j| r[(i / 3, j % 3)])
}

fn kron(a: &Matrix3<f64>, b: &Matrix3<f64>) -> Matrix9 {
    Matrix9::from_fn(|i, j| a[(i / 3, j / 3)] * b[(i % 3, j % 3)])
}

/// Curvature of the penalty, `∂²P/∂vec(R)² = 4M`, with
/// `M = R̂⊙R̂ᵀ + I₉ + (RRᵀ − I)⊗I₃ + I₃⊗(RᵀR − I)`.
pub fn penalty_curvature(r: &Matrix3<f64>) -> Matrix9 {
    let i3 = Matrix3::identity();
    let rh = r_hat(r);
    rh.component_mul(&rh.transpose()) + Matrix9::identity() + kron(&(r * r.transpose() - i3), &i3) + kron(&i3, &(r.transpose() * r - i3))
}

/// Per-pair quantities shared by the Hessian and cross-derivative blocks.
#[derive(Debug, Clone)]
pub struct GradWorkspace {
    pub x_hat: Vec<Vector12>,
    pub n_hat: Vec<Vector12>,
    /// `n̂ᵢ ⊙ x̂ᵢ`.
    pub phi: Vec<Vector12>,
    /// `(R xᵢ + t − yᵢ)·nᵢ`.
    pub residual: Vec<f64>,
    pub r_hat: Matrix9,
    pub m: Matrix9,
}

impl GradWorkspace {
    pub fn new(corr: &CorrespondenceSet, source: &PointCloud, g: &GVector) -> Result<Self> {
        if corr.len() != source.len() {
            return Err(Error::InvalidArgument("correspondence and source lengths differ".into()));
        }
        let r = g.rotation_part();
        let x_hat: Vec<_> = source.positions.iter().map(x_hat).collect();
        let n_hat: Vec<_> = corr.normals.iter().map(n_hat).collect();
        let phi: Vec<Vector12> = x_hat.iter().zip(&n_hat).map(|(x, n)| n.component_mul(x)).collect();
        let residual = phi.iter().enumerate().map(|(i, p)| p.dot(&g.0) - corr.targets[i].dot(&corr.normals[i])).collect();
        Ok(GradWorkspace { x_hat, n_hat, phi, residual, r_hat: r_hat(&r), m: penalty_curvature(&r) })
    }

    fn data_hessian(&self, weights: &[f64]) -> Matrix12 {
        let mut h = CompensatedMatrix::<12, 12>::default();
        for (p, z) in self.phi.iter().zip(weights) {
            h.add(&(p * p.transpose() * (2.0 * z)));
        }
        h.value()
    }

    fn energy_gradient(&self, weights: &[f64]) -> Vector12 {
        let mut s = CompensatedMatrix::<12, 1>::default();
        for ((p, r), z) in self.phi.iter().zip(&self.residual).zip(weights) {
            s.add(&(p * (2.0 * z * r)));
        }
        s.value()
    }
}

/// `‖RᵀR − I‖²_F`.
pub fn penalty(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm_squared()
}

/// `∂P/∂vec(R) = vec(4 R (RᵀR − I))`, row-major.
pub fn penalty_gradient(r: &Matrix3<f64>) -> SVector<f64, 9> {
    let d = r * (r.transpose() * r - Matrix3::identity()) * 4.0;
    SVector::<f64, 9>::from_fn(|k, _| d[(k / 3, k % 3)])
}

/// `∂E/∂g = 2 Σ ζᵢ rᵢ φᵢ`.
pub fn energy_gradient_g(corr: &CorrespondenceSet, source: &PointCloud, g: &GVector) -> Result<Vector12> {
    Ok(GradWorkspace::new(corr, source, g)?.energy_gradient(&corr.weights))
}

/// Least-squares balance of the rotation parts of `∂E/∂g` and `∂P/∂g`:
/// `|∂P·∂E| / |∂P·∂P|`, and 0 when the denominator is below 1e-24.
pub fn penalty_lambda(corr: &CorrespondenceSet, source: &PointCloud, g: &GVector) -> Result<f64> {
    let de = energy_gradient_g(corr, source, g)?;
    let dp = penalty_gradient(&g.rotation_part());
    let denom = dp.dot(&dp);
    if denom < LAMBDA_DENOM_MIN {
        return Ok(0.0);
    }
    Ok((dp.dot(&de.fixed_rows::<9>(0))).abs() / denom)
}

fn with_penalty(data: &Matrix12, curvature: &Matrix9) -> Matrix12 {
    let mut h = *data;
    let mut block = h.fixed_view_mut::<9, 9>(0, 0);
    block += curvature * 4.0;
    h
}

/// `∂²Ê/∂g² = 2 Σ ζᵢ φᵢφᵢᵀ + 4λ [M 0; 0 0]`.
pub fn hessian(corr: &CorrespondenceSet, source: &PointCloud, g: &GVector, lambda: f64) -> Result<Matrix12> {
    let ws = GradWorkspace::new(corr, source, g)?;
    Ok(with_penalty(&ws.data_hessian(&corr.weights), &(ws.m * lambda)))
}

/// `∂²Ê/∂p∂g` for one pair; λ does not enter since `P` depends on `g` only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossBlocks {
    pub y: Matrix12x3,
    pub n: Matrix12x3,
    pub x: Matrix12x3,
    pub zeta: Vector12,
}

fn cross_block(ws: &GradWorkspace, corr: &CorrespondenceSet, source: &PointCloud, g: &GVector, i: usize) -> CrossBlocks {
    let r = g.rotation_part();
    let (x, n, y, z) = (source.positions[i], corr.normals[i], corr.targets[i], corr.weights[i]);
    let phi = ws.phi[i];
    let res = ws.residual[i];
    let d = r * x + g.translation_part() - y;
    let rn = res * n;
    let mut x_second = Matrix12x3::zeros();
    for a in 0..3 {
        for b in 0..3 {
            x_second[(3 * a + b, b)] = rn[a];
        }
    }
    CrossBlocks {
        y: phi * n.transpose() * (-2.0 * z),
        n: (phi * d.transpose() + x_cap(&x) * res) * (2.0 * z),
        x: (phi * (r.transpose() * n).transpose() + x_second) * (2.0 * z),
        zeta: phi * (2.0 * res),
    }
}

pub fn cross_derivs(corr: &CorrespondenceSet, source: &PointCloud, g: &GVector) -> Result<Vec<CrossBlocks>> {
    let ws = GradWorkspace::new(corr, source, g)?;
    Ok((0..corr.len()).into_par_iter().map(|i| cross_block(&ws, corr, source, g, i)).collect())
}

#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub d_g_d_x: Vec<Matrix12x3>,
    pub d_g_d_y: Vec<Matrix12x3>,
    pub d_g_d_n: Vec<Matrix12x3>,
    pub d_g_d_zeta: Vec<Vector12>,
    /// Least-squares λ at `g` (0 on the clamped branch).
    pub lambda: f64,
    /// Penalty stiffness actually applied in `hessian`.
    pub stiffness: f64,
    /// The factorized matrix.
    pub hessian: Matrix12,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BackwardOptions {
    /// Added to the diagonal of the Hessian.
    pub damping: f64,
}

pub fn backward(corr: &CorrespondenceSet, source: &PointCloud, g: &GVector) -> Result<GradientBundle> {
    backward_with(corr, source, g, &BackwardOptions::default())
}

/// Jacobians of `g*` from one 12×12 factorization and `10N` back-substitutions.
pub fn backward_with(
    corr: &CorrespondenceSet,
    source: &PointCloud,
    g: &GVector,
    opts: &BackwardOptions,
) -> Result<GradientBundle> {
    let ws = GradWorkspace::new(corr, source, g)?;
    let r = g.rotation_part();
    let data = ws.data_hessian(&corr.weights);
    let de = ws.energy_gradient(&corr.weights);
    let lambda = {
        let dp = penalty_gradient(&r);
        let denom = dp.dot(&dp);
        if denom < LAMBDA_DENOM_MIN { 0.0 } else { dp.dot(&de.fixed_rows::<9>(0)).abs() / denom }
    };

    let rot_scale = (0..9).map(|k| data[(k, k)]).fold(0.0, f64::max);
    let stiffness = lambda.max(STIFFNESS_RATIO * rot_scale);
    // The penalized minimizer sits off the manifold at R̃ = R(I + F), where
    // stationarity 4λ R̃(R̃ᵀR̃ − I) = −∂E/∂R gives 2λF = −sym(Rᵀ ∂E/∂R)/4.
    // The penalty curvature is evaluated there.
    let de_r = Matrix3::from_fn(|a, b| de[3 * a + b]);
    let rt_de = r.transpose() * de_r;
    let f = -(rt_de + rt_de.transpose()) / (16.0 * stiffness.max(f64::MIN_POSITIVE));
    let r_tilde = r * (Matrix3::identity() + f);
    let mut h = with_penalty(&data, &(penalty_curvature(&r_tilde) * stiffness));
    h += Matrix12::identity() * opts.damping;

    let chol = PivotedCholesky::factor(&h, HESSIAN_PIVOT_TOL).map_err(|_| Error::SingularHessian)?;
    let solved: Vec<(Matrix12x3, Matrix12x3, Matrix12x3, Vector12)> = (0..corr.len())
        .into_par_iter()
        .map(|i| {
            let c = cross_block(&ws, corr, source, g, i);
            (-chol.solve(&c.x), -chol.solve(&c.y), -chol.solve(&c.n), -chol.solve_vec(&c.zeta))
        })
        .collect();
    let mut bundle = GradientBundle {
        d_g_d_x: Vec::with_capacity(corr.len()),
        d_g_d_y: Vec::with_capacity(corr.len()),
        d_g_d_n: Vec::with_capacity(corr.len()),
        d_g_d_zeta: Vec::with_capacity(corr.len()),
        lambda,
        stiffness,
        hessian: h,
    };
    for (x, y, n, z) in solved {
        bundle.d_g_d_x.push(x);
        bundle.d_g_d_y.push(y);
        bundle.d_g_d_n.push(n);
        bundle.d_g_d_zeta.push(z);
    }
    Ok(bundle)
}

/// Per-point loss gradients `∂L/∂xᵢ, ∂L/∂yᵢ, ∂L/∂nᵢ, ∂L/∂ζᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGradients {
    pub x: Vec<Vector3<f64>>,
    pub y: Vec<Vector3<f64>>,
    pub n: Vec<Vector3<f64>>,
    pub zeta: Vec<f64>,
}

pub fn chain_loss(d_loss_d_g: &Vector12, bundle: &GradientBundle) -> PointGradients {
    let row = |j: &Matrix12x3| (d_loss_d_g.transpose() * j).transpose();
    PointGradients {
        x: bundle.d_g_d_x.iter().map(row).collect(),
        y: bundle.d_g_d_y.iter().map(row).collect(),
        n: bundle.d_g_d_n.iter().map(row).collect(),
        zeta: bundle.d_g_d_zeta.iter().map(|j| d_loss_d_g.dot(j)).collect(),
    }
}

/// `L = ‖RᵀR_gt − I‖²_F + ‖t − t_gt‖²` and `∂L/∂g`.
pub fn rigid_motion_loss(g: &GVector, gt: &RigidTransform) -> (f64, Vector12) {
    let r = g.rotation_part();
    let rg = gt.rotation.matrix();
    let d = r.transpose() * rg - Matrix3::identity();
    let dt = g.translation_part() - gt.translation;
    let dr = rg * d.transpose() * 2.0;
    let grad = Vector12::from_fn(|k, _| if k < 9 { dr[(k / 3, k % 3)] } else { 2.0 * dt[k - 9] });
    (d.norm_squared() + dt.norm_squared(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{synth_shape, ShapeKind};
    use crate::geom::{apply, RotationMatrix};
    use crate::rng;
    use crate::solver::{register_p2pl, SolveOptions};
    use rand::Rng;

    fn noisy_instance(seed: u64, n: usize, noise: f64) -> (PointCloud, CorrespondenceSet) {
        let mut r = rng::stream(seed, 7);
        let source = synth_shape(ShapeKind::Blob, n, seed).unwrap();
        let gt = RigidTransform::new(
            RotationMatrix::from_euler_zyx(r.random_range(0.0..0.7), r.random_range(0.0..0.7), r.random_range(0.0..0.7)),
            Vector3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)),
        );
        let moved = apply(&gt, &source);
        let targets = moved.positions.iter().map(|p| p + Vector3::from_fn(|_, _| r.random_range(-noise..noise))).collect();
        let normals = moved
            .normals
            .unwrap()
            .iter()
            .map(|m| (m + Vector3::from_fn(|_, _| r.random_range(-noise..noise))).normalize())
            .collect();
        let weights = (0..n).map(|_| r.random_range(0.5..1.5)).collect();
        (source, CorrespondenceSet::with_weights(targets, normals, weights).unwrap())
    }

    fn random_g(r: &mut impl Rng, spread: f64) -> GVector {
        GVector(Vector12::from_fn(|k, _| {
            let base = if k < 9 && k % 4 == 0 { 1.0 } else { 0.0 };
            base + r.random_range(-spread..spread)
        }))
    }

    /// `∇_g Ê` written directly from the energy, for the FD oracles.
    fn penalized_gradient(corr: &CorrespondenceSet, source: &PointCloud, g: &GVector, lambda: f64) -> Vector12 {
        let mut grad = Vector12::zeros();
        let r = g.rotation_part();
        let t = g.translation_part();
        for i in 0..corr.len() {
            let (x, n, y, z) = (source.positions[i], corr.normals[i], corr.targets[i], corr.weights[i]);
            let res = (r * x + t - y).dot(&n);
            for a in 0..3 {
                for b in 0..3 {
                    grad[3 * a + b] += 2.0 * z * res * n[a] * x[b];
                }
                grad[9 + a] += 2.0 * z * res * n[a];
            }
        }
        // Penalty term by index loops: ∂P/∂R_kl = 2 Σ_ij S_ij ∂S_ij/∂R_kl, S = RᵀR − I.
        let s = r.transpose() * r - Matrix3::identity();
        for k in 0..3 {
            for l in 0..3 {
                let mut d = 0.0;
                for j in 0..3 {
                    d += 2.0 * s[(l, j)] * r[(k, j)] + 2.0 * s[(j, l)] * r[(k, j)];
                }
                grad[3 * k + l] += lambda * d;
            }
        }
        grad
    }

    #[test]
    fn hat_identity_reproduces_residual() {
        let mut r = rng::stream(1, 0);
        for _ in 0..100 {
            let g = random_g(&mut r, 1.0);
            let x = Vector3::new(r.random(), r.random(), r.random());
            let n = Vector3::new(r.random(), r.random(), r.random());
            let lhs = n_hat(&n).component_mul(&x_hat(&x)).dot(&g.0);
            let rhs = (g.rotation_part() * x + g.translation_part()).dot(&n);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_examples() {
        assert!(penalty(RotationMatrix::from_euler_zyx(0.3, 0.2, 0.1).matrix()) < 1e-18);
        assert_eq!(penalty(&(Matrix3::identity() * 2.0)), 27.0);
        let mut r = rng::stream(2, 0);
        let m = Matrix3::from_fn(|_, _| r.random_range(-1.0..1.0));
        let mut oracle = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut s = if i == j { -1.0 } else { 0.0 };
                for k in 0..3 {
                    s += m[(k, i)] * m[(k, j)];
                }
                oracle += s * s;
            }
        }
        assert!((penalty(&m) - oracle).abs() < 1e-12);
    }

    #[test]
    fn penalty_gradient_and_curvature_match_fd() {
        let mut r = rng::stream(3, 0);
        for _ in 0..20 {
            let m = Matrix3::identity() + Matrix3::from_fn(|_, _| r.random_range(-0.3..0.3));
            let grad = penalty_gradient(&m);
            let curv = penalty_curvature(&m) * 4.0;
            let h = 1e-6;
            for k in 0..9 {
                let (mut mp, mut mm) = (m, m);
                mp[(k / 3, k % 3)] += h;
                mm[(k / 3, k % 3)] -= h;
                let fd = (penalty(&mp) - penalty(&mm)) / (2.0 * h);
                assert!((fd - grad[k]).abs() < 1e-7 * (1.0 + fd.abs()));
                let col = (penalty_gradient(&mp) - penalty_gradient(&mm)) / (2.0 * h);
                for j in 0..9 {
                    assert!((col[j] - curv[(j, k)]).abs() < 1e-7 * (1.0 + col[j].abs()));
                }
            }
            assert!((curv - curv.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_curvature_drops_kronecker_terms() {
        let r = *RotationMatrix::from_euler_zyx(0.4, -0.3, 1.1).matrix();
        let rh = r_hat(&r);
        let expected = rh.component_mul(&rh.transpose()) + Matrix9::identity();
        assert!((penalty_curvature(&r) - expected).amax() < 1e-14);
    }

    #[test]
    fn hessian_matches_fd_of_gradient() {
        let (source, corr) = noisy_instance(4, 40, 0.05);
        let mut r = rng::stream(4, 1);
        for lambda in [0.0, 0.7, 12.0] {
            let g = random_g(&mut r, 0.2);
            let h = hessian(&corr, &source, &g, lambda).unwrap();
            assert!((h - h.transpose()).amax() <= 1e-10 * h.amax());
            let step = 1e-5;
            for k in 0..12 {
                let (mut gp, mut gm) = (g, g);
                gp.0[k] += step;
                gm.0[k] -= step;
                let col = (penalized_gradient(&corr, &source, &gp, lambda)
                    - penalized_gradient(&corr, &source, &gm, lambda))
                    / (2.0 * step);
                let err = (col - h.column(k)).norm();
                assert!(err <= 1e-5 * h.column(k).norm().max(1.0), "lambda {lambda}, column {k}: {err}");
            }
        }
    }

    #[test]
    fn data_hessian_is_psd() {
        let (source, corr) = noisy_instance(5, 30, 0.05);
        let g = random_g(&mut rng::stream(5, 1), 0.3);
        let h = hessian(&corr, &source, &g, 0.0).unwrap();
        assert!(h.symmetric_eigen().eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn cross_blocks_match_fd_per_input() {
        let (source, corr) = noisy_instance(6, 12, 0.05);
        let g = random_g(&mut rng::stream(6, 1), 0.2);
        let blocks = cross_derivs(&corr, &source, &g).unwrap();
        let grad = |c: &CorrespondenceSet, s: &PointCloud| penalized_gradient(c, s, &g, 0.0);
        let step = 1e-5;
        for i in [0, 5, 11] {
            for j in 0..3 {
                let fd = |perturb: &dyn Fn(&mut CorrespondenceSet, &mut PointCloud, f64)| {
                    let (mut cp, mut sp) = (corr.clone(), source.clone());
                    let (mut cm, mut sm) = (corr.clone(), source.clone());
                    perturb(&mut cp, &mut sp, step);
                    perturb(&mut cm, &mut sm, -step);
                    (grad(&cp, &sp) - grad(&cm, &sm)) / (2.0 * step)
                };
                let check = |fd: Vector12, an: Vector12| {
                    assert!((fd - an).norm() <= 1e-5 * an.norm().max(1.0), "pair {i}: {fd} vs {an}");
                };
                check(fd(&|c, _, h| c.targets[i][j] += h), blocks[i].y.column(j).into_owned());
                check(fd(&|c, _, h| c.normals[i][j] += h), blocks[i].n.column(j).into_owned());
                check(fd(&|_, s, h| s.positions[i][j] += h), blocks[i].x.column(j).into_owned());
            }
            let fd_z = {
                let (mut cp, mut cm) = (corr.clone(), corr.clone());
                cp.weights[i] += step;
                cm.weights[i] -= step;
                (grad(&cp, &source) - grad(&cm, &source)) / (2.0 * step)
            };
            assert!((fd_z - blocks[i].zeta).norm() <= 1e-5 * blocks[i].zeta.norm().max(1.0));
        }
    }

    #[test]
    fn zero_residual_blocks_and_zeta_scaling() {
        let source = synth_shape(ShapeKind::Blob, 10, 7).unwrap();
        let gt = RigidTransform::new(RotationMatrix::from_euler_zyx(0.2, 0.1, 0.3), Vector3::new(0.1, 0.0, 0.2));
        let moved = apply(&gt, &source);
        let mut corr = CorrespondenceSet::new(moved.positions, moved.normals.unwrap()).unwrap();
        let g = gt.to_g();
        let blocks = cross_derivs(&corr, &source, &g).unwrap();
        let ws = GradWorkspace::new(&corr, &source, &g).unwrap();
        for (i, b) in blocks.iter().enumerate() {
            assert!(ws.residual[i].abs() < 1e-14);
            assert!(b.zeta.amax() < 1e-13);
            let d = moved_d(&corr, &source, &g, i);
            let first_n = ws.phi[i] * d.transpose() * 2.0;
            assert!((b.n - first_n).amax() < 1e-13);
        }
        corr.weights[3] = 2.0;
        let doubled = cross_derivs(&corr, &source, &g).unwrap();
        assert_eq!(doubled[3].y, blocks[3].y * 2.0);
        assert_eq!(doubled[3].n, blocks[3].n * 2.0);
        assert_eq!(doubled[3].x, blocks[3].x * 2.0);
    }

    fn moved_d(corr: &CorrespondenceSet, source: &PointCloud, g: &GVector, i: usize) -> Vector3<f64> {
        g.rotation_part() * source.positions[i] + g.translation_part() - corr.targets[i]
    }

    #[test]
    fn lambda_examples() {
        let source = synth_shape(ShapeKind::Blob, 30, 8).unwrap();
        let corr = CorrespondenceSet::new(source.positions.clone(), source.normals.clone().unwrap()).unwrap();
        let g = RigidTransform::identity().to_g();
        assert_eq!(penalty_lambda(&corr, &source, &g).unwrap(), 0.0);

        let (source, corr) = noisy_instance(8, 30, 0.05);
        let mut g = register_p2pl(&corr, &source, 10, &SolveOptions::default()).unwrap().transform.to_g();
        g.0[0] += 1e-6;
        g.0[4] -= 1e-6;
        g.0[5] += 1e-6;
        let lambda = penalty_lambda(&corr, &source, &g).unwrap();
        assert!(lambda.is_finite() && lambda >= 0.0);

        // 1-D least squares: min_λ ‖∂E + λ∂P‖² over the rotation entries.
        let de = energy_gradient_g(&corr, &source, &g).unwrap().fixed_rows::<9>(0).into_owned();
        let dp = penalty_gradient(&g.rotation_part());
        let best = -de.dot(&dp) / dp.dot(&dp);
        let objective = |l: f64| (de + dp * l).norm_squared();
        assert!(objective(best) <= objective(best + 1e-3 * best.abs().max(1.0)));
        assert!((lambda - best.abs()).abs() <= 1e-9 * lambda.max(1.0));
    }

    #[test]
    fn rigid_motion_loss_examples() {
        let gt = RigidTransform::new(RotationMatrix::from_euler_zyx(0.3, 0.1, -0.2), Vector3::new(1.0, 2.0, 3.0));
        let (l, grad) = rigid_motion_loss(&gt.to_g(), &gt);
        assert!(l < 1e-28);
        assert_eq!(grad.fixed_rows::<3>(9).into_owned(), Vector3::zeros());

        let off = RigidTransform::new(gt.rotation, gt.translation + Vector3::new(0.0, 0.0, 0.5));
        assert!((rigid_motion_loss(&off.to_g(), &gt).0 - 0.25).abs() < 1e-14);

        let mut r = rng::stream(9, 0);
        let g = random_g(&mut r, 0.4);
        let (_, grad) = rigid_motion_loss(&g, &gt);
        let h = 1e-6;
        for k in 0..12 {
            let (mut gp, mut gm) = (g, g);
            gp.0[k] += h;
            gm.0[k] -= h;
            let fd = (rigid_motion_loss(&gp, &gt).0 - rigid_motion_loss(&gm, &gt).0) / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-7 * grad[k].abs().max(1.0));
        }
    }

    #[test]
    fn chain_loss_is_linear() {
        let (source, corr) = noisy_instance(10, 20, 0.01);
        let g = register_p2pl(&corr, &source, 10, &SolveOptions::default()).unwrap().transform.to_g();
        let bundle = backward(&corr, &source, &g).unwrap();
        let zero = chain_loss(&Vector12::zeros(), &bundle);
        assert!(zero.x.iter().chain(&zero.y).chain(&zero.n).all(|v| *v == Vector3::zeros()));
        assert!(zero.zeta.iter().all(|v| *v == 0.0));

        let mut r = rng::stream(10, 1);
        let u = Vector12::from_fn(|_, _| r.random_range(-1.0..1.0));
        let v = Vector12::from_fn(|_, _| r.random_range(-1.0..1.0));
        let (a, b) = (2.0, -0.5);
        let lhs = chain_loss(&(u * a + v * b), &bundle);
        let (cu, cv) = (chain_loss(&u, &bundle), chain_loss(&v, &bundle));
        for i in 0..20 {
            assert!((lhs.x[i] - (cu.x[i] * a + cv.x[i] * b)).amax() < 1e-12 * lhs.x[i].amax().max(1.0));
            assert!((lhs.zeta[i] - (cu.zeta[i] * a + cv.zeta[i] * b)).abs() < 1e-12 * lhs.zeta[i].abs().max(1.0));
        }
    }

    #[test]
    fn bundle_is_finite_and_hessian_symmetric() {
        let (source, corr) = noisy_instance(11, 50, 0.01);
        let g = register_p2pl(&corr, &source, 10, &SolveOptions::default()).unwrap().transform.to_g();
        let b = backward(&corr, &source, &g).unwrap();
        assert!((b.hessian - b.hessian.transpose()).amax() <= 1e-10 * b.hessian.amax());
        assert!(b.lambda >= 0.0 && b.stiffness > 0.0);
        assert!(b.d_g_d_x.iter().all(|m| m.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn planar_geometry_gives_singular_hessian() {
        let mut r = rng::stream(12, 0);
        let pts: Vec<_> = (0..30).map(|_| Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 0.0)).collect();
        let source = PointCloud::new(pts.clone()).unwrap();
        let corr = CorrespondenceSet::new(pts, vec![Vector3::z(); 30]).unwrap();
        let g = RigidTransform::identity().to_g();
        assert!(matches!(backward(&corr, &source, &g), Err(Error::SingularHessian)));
        assert!(backward_with(&corr, &source, &g, &BackwardOptions { damping: 1e-3 }).is_ok());
    }
}
