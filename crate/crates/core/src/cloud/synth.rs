//! Analytic test shapes with exact normals.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::PointCloud;
use crate::error::{Error, Result};
use crate::rng;

const TORUS_MAJOR: f64 = 0.6;
const TORUS_MINOR: f64 = 0.25;
const BLOB_BASE: f64 = 0.8;
const BLOB_BUMPS: usize = 6;
const BLOB_SHARPNESS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    /// Surface of the cube [−0.5, 0.5]³.
    Cube,
    /// Unit sphere.
    Sphere,
    /// Torus about z with major radius 0.6 and tube radius 0.25.
    Torus,
    /// Star-shaped surface `‖p‖ = r(p/‖p‖)` with smooth random bumps.
    Blob,
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cube" => Ok(ShapeKind::Cube),
            "sphere" => Ok(ShapeKind::Sphere),
            "torus" => Ok(ShapeKind::Torus),
            "blob" => Ok(ShapeKind::Blob),
            other => Err(Error::InvalidArgument(format!("unknown shape '{other}'"))),
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ShapeKind::Cube => "cube",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Torus => "torus",
            ShapeKind::Blob => "blob",
        };
        f.write_str(name)
    }
}

pub fn synth_shape(kind: ShapeKind, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 8 {
        return Err(Error::InvalidArgument(format!("synth_shape needs n >= 8, got {n}")));
    }
    let mut rng = rng::substream(seed, 0x5A17, 0);
    let (positions, normals): (Vec<_>, Vec<_>) = match kind {
        ShapeKind::Cube => (0..n).map(|_| cube_point(&mut rng)).unzip(),
        ShapeKind::Sphere => (0..n)
            .map(|_| {
                let p = unit_direction(&mut rng);
                (p, p / p.norm())
            })
            .unzip(),
        ShapeKind::Torus => (0..n).map(|_| torus_point(&mut rng)).unzip(),
        ShapeKind::Blob => {
            let blob = Blob::random(&mut rng::substream(seed, 0xB10B, 0));
            (0..n).map(|_| blob.sample(&unit_direction(&mut rng))).unzip()
        }
    };
    PointCloud::with_normals(positions, normals)
}

pub(crate) fn unit_direction(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn cube_point(rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
    let face = rng.random_range(0..6);
    let axis = face / 2;
    let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
    let mut p = Vector3::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
    );
    p[axis] = 0.5 * sign;
    let mut n = Vector3::zeros();
    n[axis] = sign;
    (p, n)
}

fn torus_point(rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
    let u = rng.random_range(0.0..2.0 * PI);
    let v = rng.random_range(0.0..2.0 * PI);
    torus_at(u, v)
}

fn torus_at(u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
    let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
    let p = Vector3::new(ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin());
    let n = Vector3::new(v.cos() * u.cos(), v.cos() * u.sin(), v.sin());
    (p, n / n.norm())
}

/// Radius `r(d) = base + Σ a_k·exp(κ(d·c_k − 1))` over unit directions `d`.
#[derive(Debug, Clone)]
struct Blob {
    centers: [Vector3<f64>; BLOB_BUMPS],
    amplitudes: [f64; BLOB_BUMPS],
}

impl Blob {
    fn random(rng: &mut impl Rng) -> Self {
        Blob {
            centers: std::array::from_fn(|_| unit_direction(rng)),
            amplitudes: std::array::from_fn(|_| rng.random_range(-0.1..0.3)),
        }
    }

    fn radius_and_gradient(&self, d: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let mut r = BLOB_BASE;
        let mut grad = Vector3::zeros();
        for (c, a) in self.centers.iter().zip(&self.amplitudes) {
            let e = a * (BLOB_SHARPNESS * (d.dot(c) - 1.0)).exp();
            r += e;
            grad += c * (BLOB_SHARPNESS * e);
        }
        (r, grad)
    }

    /// Point on the surface along `d` and the normalized gradient of the
    /// implicit function `‖p‖ − r(p/‖p‖)`.
    fn sample(&self, d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let (r, grad_d) = self.radius_and_gradient(d);
        let p = d * r;
        let tangent_proj = Matrix3::identity() - d * d.transpose();
        let g = d - tangent_proj * grad_d / r;
        (p, g / g.norm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_normals_are_radial() {
        let c = synth_shape(ShapeKind::Sphere, 300, 1).unwrap();
        for (p, n) in c.positions.iter().zip(c.normals.as_ref().unwrap()) {
            assert_eq!(*n, p / p.norm());
        }
    }

    #[test]
    fn cube_normals_are_axis_aligned() {
        let c = synth_shape(ShapeKind::Cube, 300, 2).unwrap();
        for n in c.normals.as_ref().unwrap() {
            assert_eq!(n.iter().filter(|x| x.abs() == 1.0).count(), 1);
            assert_eq!(n.iter().filter(|x| **x == 0.0).count(), 2);
        }
    }

    #[test]
    fn torus_normals_are_orthogonal_to_tangents() {
        let mut rng = rng::stream(3, 0);
        for _ in 0..500 {
            let u = rng.random_range(0.0..2.0 * PI);
            let v = rng.random_range(0.0..2.0 * PI);
            let (_, n) = torus_at(u, v);
            let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
            let du = Vector3::new(-ring * u.sin(), ring * u.cos(), 0.0);
            let dv = Vector3::new(
                -TORUS_MINOR * v.sin() * u.cos(),
                -TORUS_MINOR * v.sin() * u.sin(),
                TORUS_MINOR * v.cos(),
            );
            assert!(n.dot(&du).abs() < 1e-9);
            assert!(n.dot(&dv).abs() < 1e-9);
        }
    }

    #[test]
    fn blob_normals_match_surface_tangents() {
        // Finite-difference tangents along the surface parameterization.
        let blob = Blob::random(&mut rng::stream(4, 0));
        let mut rng = rng::stream(4, 1);
        for _ in 0..200 {
            let d = unit_direction(&mut rng);
            let (p, n) = blob.sample(&d);
            let t1 = d.cross(&Vector3::x()).normalize();
            let t2 = d.cross(&t1);
            for t in [t1, t2] {
                let h = 1e-6;
                let (pa, _) = blob.sample(&(d + t * h).normalize());
                let (pb, _) = blob.sample(&(d - t * h).normalize());
                let tangent = (pa - pb) / (2.0 * h);
                assert!(n.dot(&tangent).abs() < 1e-6 * tangent.norm().max(1.0));
            }
            assert!((n.norm() - 1.0).abs() < 1e-12);
            assert!(p.norm() > 0.1);
        }
    }

    #[test]
    fn too_few_points_is_rejected() {
        assert!(synth_shape(ShapeKind::Cube, 7, 0).is_err());
    }

    #[test]
    fn shape_names_round_trip() {
        for k in [ShapeKind::Cube, ShapeKind::Sphere, ShapeKind::Torus, ShapeKind::Blob] {
            assert_eq!(k.to_string().parse::<ShapeKind>().unwrap(), k);
        }
    }
}
