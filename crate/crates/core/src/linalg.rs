//! Small dense linear algebra: pivoted Cholesky for the 6×6 and 12×12
//! systems, a closed-form symmetric 3×3 eigensolver, and compensated sums.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        iter.into_iter().for_each(|x| s.add(x));
        s
    }
}

/// Entry-wise compensated accumulator for fixed-size matrices.
#[derive(Debug, Clone)]
pub struct CompensatedMatrix<const R: usize, const C: usize> {
    sum: SMatrix<f64, R, C>,
    comp: SMatrix<f64, R, C>,
}

impl<const R: usize, const C: usize> Default for CompensatedMatrix<R, C> {
    fn default() -> Self {
        CompensatedMatrix { sum: SMatrix::zeros(), comp: SMatrix::zeros() }
    }
}

impl<const R: usize, const C: usize> CompensatedMatrix<R, C> {
    pub fn add(&mut self, m: &SMatrix<f64, R, C>) {
        for (k, &x) in m.iter().enumerate() {
            let s = self.sum[k];
            let t = s + x;
            if s.abs() >= x.abs() {
                self.comp[k] += (s - t) + x;
            } else {
                self.comp[k] += (x - t) + s;
            }
            self.sum[k] = t;
        }
    }

    pub fn value(&self) -> SMatrix<f64, R, C> {
        self.sum + self.comp
    }
}

/// A pivot fell below the relative tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPivot {
    pub step: usize,
}

/// `P·A·Pᵀ = L·Lᵀ` for symmetric positive semidefinite `A`, with diagonal
/// pivoting (largest remaining diagonal first, lowest index on ties).
#[derive(Debug, Clone)]
pub struct PivotedCholesky<const D: usize> {
    l: SMatrix<f64, D, D>,
    perm: [usize; D],
    condition: f64,
}

impl<const D: usize> PivotedCholesky<D> {
    /// Fails when a pivot drops to `rel_tol` times the largest pivot or below.
    pub fn factor(a: &SMatrix<f64, D, D>, rel_tol: f64) -> Result<Self, SingularPivot> {
        let mut w = *a;
        let mut perm: [usize; D] = std::array::from_fn(|i| i);
        let mut max_pivot = 0.0_f64;
        let mut min_pivot = f64::INFINITY;
        for k in 0..D {
            let mut p = k;
            for i in k + 1..D {
                if w[(i, i)] > w[(p, p)] {
                    p = i;
                }
            }
            if p != k {
                w.swap_rows(k, p);
                w.swap_columns(k, p);
                perm.swap(k, p);
            }
            let pivot = w[(k, k)];
            if k == 0 {
                max_pivot = pivot;
            }
            if !(pivot > rel_tol * max_pivot) || !(max_pivot > 0.0) || !pivot.is_finite() {
                return Err(SingularPivot { step: k });
            }
            min_pivot = min_pivot.min(pivot);
            let lkk = pivot.sqrt();
            w[(k, k)] = lkk;
            for i in k + 1..D {
                w[(i, k)] /= lkk;
            }
            // Full trailing update keeps the working matrix symmetric, so
            // later row/column swaps stay valid.
            for j in k + 1..D {
                let ljk = w[(j, k)];
                for i in k + 1..D {
                    w[(i, j)] -= w[(i, k)] * ljk;
                }
            }
        }
        let l = SMatrix::<f64, D, D>::from_fn(|i, j| if i >= j { w[(i, j)] } else { 0.0 });
        Ok(PivotedCholesky { l, perm, condition: max_pivot / min_pivot })
    }

    /// Ratio of largest to smallest pivot, a cheap lower-bound style
    /// estimate of the 2-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn solve_vec(&self, b: &SVector<f64, D>) -> SVector<f64, D> {
        let mut z = SVector::<f64, D>::from_fn(|k, _| b[self.perm[k]]);
        for i in 0..D {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[(i, k)] * z[k];
            }
            z[i] = s / self.l[(i, i)];
        }
        for i in (0..D).rev() {
            let mut s = z[i];
            for k in i + 1..D {
                s -= self.l[(k, i)] * z[k];
            }
            z[i] = s / self.l[(i, i)];
        }
        let mut x = SVector::<f64, D>::zeros();
        for k in 0..D {
            x[self.perm[k]] = z[k];
        }
        x
    }

    pub fn solve<const C: usize>(&self, b: &SMatrix<f64, D, C>) -> SMatrix<f64, D, C> {
        let mut out = SMatrix::<f64, D, C>::zeros();
        for c in 0..C {
            out.set_column(c, &self.solve_vec(&b.column(c).into_owned()));
        }
        out
    }
}

/// Eigen-decomposition of a symmetric 3×3 matrix.
#[derive(Debug, Clone, Copy)]
pub struct SymEigen3 {
    /// Descending.
    pub values: [f64; 3],
    /// `vectors[k]` pairs with `values[k]`; orthonormal.
    pub vectors: [Vector3<f64>; 3],
}

impl SymEigen3 {
    pub fn largest(&self) -> (f64, Vector3<f64>) {
        (self.values[0], self.vectors[0])
    }

    pub fn smallest(&self) -> (f64, Vector3<f64>) {
        (self.values[2], self.vectors[2])
    }
}

/// Closed-form eigenvalues from the characteristic polynomial (trigonometric
/// form), one Newton polish step on each, and eigenvectors from cross
/// products of the rows of `A − λI`.
pub fn sym_eigen3(a: &Matrix3<f64>) -> SymEigen3 {
    let a = (a + a.transpose()) * 0.5;
    let scale = a.amax();
    if scale == 0.0 {
        return SymEigen3 { values: [0.0; 3], vectors: [Vector3::x(), Vector3::y(), Vector3::z()] };
    }
    let m = a / scale;
    let values = char_poly_roots(&m);
    let tol = 1e-9;
    let gap_hi = values[0] - values[1];
    let gap_lo = values[1] - values[2];

    let (v0, v2) = if gap_hi > tol && gap_lo > tol {
        let v0 = null_vector(&m, values[0]).unwrap_or_else(Vector3::x);
        let v2 = null_vector(&m, values[2]).unwrap_or_else(|| any_orthogonal(&v0));
        (v0, orthonormalize(&v2, &v0))
    } else if gap_hi > tol {
        // λ1 isolated, λ2 = λ3: the (λ2, λ3) eigenspace is v0's complement.
        let v0 = null_vector(&m, values[0]).unwrap_or_else(Vector3::x);
        let v2 = dominant_column(&(m - Matrix3::identity() * values[0]))
            .map(|c| orthonormalize(&c, &v0))
            .unwrap_or_else(|| any_orthogonal(&v0));
        (v0, v2)
    } else if gap_lo > tol {
        // λ1 = λ2 with λ3 isolated: columns of A − λ3·I span the top space.
        let v2 = null_vector(&m, values[2]).unwrap_or_else(Vector3::z);
        let v0 = dominant_column(&(m - Matrix3::identity() * values[2]))
            .map(|c| orthonormalize(&c, &v2))
            .unwrap_or_else(|| any_orthogonal(&v2));
        (v0, v2)
    } else {
        (Vector3::x(), Vector3::z())
    };
    let v1 = v2.cross(&v0).normalize();
    // Rayleigh quotients: accurate to rounding even where the trigonometric
    // roots lose half their digits (near-repeated eigenvalues).
    let mut pairs = [v0, v1, v2].map(|v| ((v.transpose() * m * v)[0], v));
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    SymEigen3 {
        values: pairs.map(|p| p.0 * scale),
        vectors: pairs.map(|p| p.1),
    }
}

fn char_poly_roots(m: &Matrix3<f64>) -> [f64; 3] {
    let q = m.trace() / 3.0;
    let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
    let p2 = (m[(0, 0)] - q).powi(2) + (m[(1, 1)] - q).powi(2) + (m[(2, 2)] - q).powi(2) + 2.0 * p1;
    if p2 <= 1e-30 {
        return [q; 3];
    }
    let p = (p2 / 6.0).sqrt();
    let b = (m - Matrix3::identity() * q) / p;
    let r = (b.determinant() * 0.5).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let l2 = 3.0 * q - l1 - l3;

    // det(A − λI) = −λ³ + c2·λ² − c1·λ + c0
    let c2 = m.trace();
    let c1 = m[(0, 0)] * m[(1, 1)] + m[(0, 0)] * m[(2, 2)] + m[(1, 1)] * m[(2, 2)] - p1;
    let c0 = m.determinant();
    let polish = |l: f64| {
        let f = ((-l + c2) * l - c1) * l + c0;
        let df = (-3.0 * l + 2.0 * c2) * l - c1;
        if df.abs() > 1e-8 {
            let step = f / df;
            if step.abs() < 1e-3 {
                return l - step;
            }
        }
        l
    };
    let mut v = [polish(l1), polish(l2), polish(l3)];
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn null_vector(m: &Matrix3<f64>, lambda: f64) -> Option<Vector3<f64>> {
    let s = m - Matrix3::identity() * lambda;
    let r0: Vector3<f64> = s.row(0).transpose();
    let r1: Vector3<f64> = s.row(1).transpose();
    let r2: Vector3<f64> = s.row(2).transpose();
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let best = candidates
        .iter()
        .copied()
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))?;
    let n = best.norm();
    (n > 1e-150).then(|| best / n)
}

fn dominant_column(s: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let k = (0..3).max_by(|&a, &b| s.column(a).norm().total_cmp(&s.column(b).norm()))?;
    let c: Vector3<f64> = s.column(k).into_owned();
    (c.norm() > 1e-150).then_some(c)
}

fn orthonormalize(v: &Vector3<f64>, against: &Vector3<f64>) -> Vector3<f64> {
    let w = v - against * against.dot(v);
    let n = w.norm();
    if n > 1e-150 {
        w / n
    } else {
        any_orthogonal(against)
    }
}

fn any_orthogonal(v: &Vector3<f64>) -> Vector3<f64> {
    let axis = if v.x.abs() <= v.y.abs() && v.x.abs() <= v.z.abs() {
        Vector3::x()
    } else if v.y.abs() <= v.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    v.cross(&axis).normalize()
}
