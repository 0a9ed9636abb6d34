//! Geometric primitives shared by every stage: planes, quaternions and rigid
//! transforms, plus total-least-squares plane fitting.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use nalgebra::Point3;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
}

/// Infinite plane `normal · x + offset = 0` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneParams {
    pub normal: Vec3,
    pub offset: f64,
}

impl PlaneParams {
    /// Builds a plane from an arbitrary (non-zero) normal, normalizing both terms.
    pub fn new(normal: Vec3, offset: f64) -> Self {
        let len = normal.norm();
        Self {
            normal: normal / len,
            offset: offset / len,
        }
    }

    pub fn from_point_normal(point: &Point3<f64>, normal: Vec3) -> Self {
        let n = normal.normalize();
        Self {
            normal: n,
            offset: -n.dot(&point.coords),
        }
    }

    #[inline]
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) + self.offset
    }

    #[inline]
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        point_plane_distance(p, self)
    }

    /// Plane mapped by `t`: every point on `self` lands on the result.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        let n = t.rotation.rotate(&self.normal);
        Self {
            normal: n,
            offset: self.offset - n.dot(&t.translation),
        }
    }

    pub fn flipped(&self) -> Self {
        Self {
            normal: -self.normal,
            offset: -self.offset,
        }
    }

    /// Orthogonal projection of `p` onto the plane.
    pub fn project(&self, p: &Point3<f64>) -> Point3<f64> {
        p - self.normal * self.signed_distance(p)
    }
}

#[inline]
pub fn point_plane_distance(p: &Point3<f64>, plane: &PlaneParams) -> f64 {
    (plane.normal.dot(&p.coords) + plane.offset).abs()
}

/// Acute angle in degrees between two unit normals; antiparallel normals count
/// as identical because fitted plane orientation is arbitrary.
pub fn rotation_angle_between_normals(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).abs().clamp(0.0, 1.0).acos().to_degrees()
}

/// Dihedral angle in degrees between the plane and the horizontal ground plane.
/// Vertical facades give 90, horizontal surfaces give 0.
pub fn verticality_angle(plane: &PlaneParams) -> f64 {
    plane.normal.z.abs().clamp(0.0, 1.0).acos().to_degrees()
}

/// Scalar-first quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        q0: 1.0,
        q1: 0.0,
        q2: 0.0,
        q3: 0.0,
    };

    pub fn new(q0: f64, q1: f64, q2: f64, q3: f64) -> Self {
        Self { q0, q1, q2, q3 }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.q0, self.q1, self.q2, self.q3]
    }

    /// Unit quaternion rotating by `angle` radians about `axis`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let a = axis.normalize();
        let (s, c) = (0.5 * angle).sin_cos();
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Shepperd's method; the result is unit-norm with `q0 >= 0`.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let tr = m.trace();
        let q = if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
            let s = (1.0 + tr).sqrt() * 2.0;
            Self::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Self::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalized().canonical()
    }

    pub fn norm(&self) -> f64 {
        (self.q0 * self.q0 + self.q1 * self.q1 + self.q2 * self.q2 + self.q3 * self.q3).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.q0 / n, self.q1 / n, self.q2 / n, self.q3 / n)
    }

    /// Representative of the `{q, -q}` pair with non-negative scalar part.
    pub fn canonical(&self) -> Self {
        if self.q0 < 0.0 {
            self.negated()
        } else {
            *self
        }
    }

    pub fn negated(&self) -> Self {
        Self::new(-self.q0, -self.q1, -self.q2, -self.q3)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.q0, -self.q1, -self.q2, -self.q3)
    }

    /// Hamilton product `self * rhs` (apply `rhs` first, then `self`).
    pub fn mul(&self, r: &Quaternion) -> Self {
        let (a0, a1, a2, a3) = (self.q0, self.q1, self.q2, self.q3);
        let (b0, b1, b2, b3) = (r.q0, r.q1, r.q2, r.q3);
        Self::new(
            a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
            a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
            a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
        )
    }

    /// Homogeneous rotation matrix. For a non-unit quaternion this is
    /// `‖q‖²` times a rotation, which is what the adjustment linearizes.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.q0, self.q1, self.q2, self.q3);
        Matrix3::new(
            w * w + x * x - y * y - z * z,
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            w * w - x * x + y * y - z * z,
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            w * w - x * x - y * y + z * z,
        )
    }

    /// Partial derivatives of [`Self::to_matrix`] with respect to q0..q3.
    pub fn matrix_derivatives(&self) -> [Matrix3<f64>; 4] {
        let (w, x, y, z) = (self.q0, self.q1, self.q2, self.q3);
        [
            Matrix3::new(w, -z, y, z, w, -x, -y, x, w) * 2.0,
            Matrix3::new(x, y, z, y, -x, -w, z, w, -x) * 2.0,
            Matrix3::new(-y, x, w, x, y, z, -w, z, -y) * 2.0,
            Matrix3::new(-z, -w, x, w, -z, y, x, y, z) * 2.0,
        ]
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.to_matrix() * v
    }

    /// Rotation angle in degrees, in `[0, 180]`.
    pub fn angle_degrees(&self) -> f64 {
        let q = self.normalized();
        let s = (q.q1 * q.q1 + q.q2 * q.q2 + q.q3 * q.q3).sqrt();
        (2.0 * s.atan2(q.q0.abs())).to_degrees()
    }
}

/// Rotation followed by translation: `p ↦ R(q)·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Quaternion,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Quaternion::IDENTITY,
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Quaternion, translation: Vec3) -> Self {
        Self {
            rotation: rotation.normalized(),
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Quaternion::IDENTITY, t)
    }

    #[inline]
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        apply_transform(self, p)
    }

    pub fn inverse(&self) -> Self {
        let q = self.rotation.conjugate();
        Self {
            rotation: q,
            translation: -q.rotate(&self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation.mul(&other.rotation).normalized(),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let r = self.rotation.to_matrix();
        let t = &self.translation;
        Matrix4::new(
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn matrix_rows(&self) -> [[f64; 4]; 4] {
        let m = self.matrix();
        let mut rows = [[0.0; 4]; 4];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[(i, j)];
            }
        }
        rows
    }
}

pub fn apply_transform(t: &RigidTransform, p: &Point3<f64>) -> Point3<f64> {
    Point3::from(t.rotation.to_matrix() * p.coords + t.translation)
}

/// Total-least-squares plane through `points`.
///
/// Orientation is fixed so that `offset <= 0` whenever the plane misses the
/// origin; planes through the origin get a normal whose first non-zero
/// component among (z, y, x) is positive.
pub fn fit_plane(points: &[Point3<f64>]) -> Result<PlaneParams, GeomError> {
    if points.len() < 3 {
        return Err(GeomError::DegenerateInput("fewer than 3 points"));
    }
    let mut acc = PlaneAccumulator::new(points[0]);
    for p in points {
        acc.push(p);
    }
    acc.fit()
}

/// Running first and second moments of a point set, referenced to a fixed
/// anchor point to limit cancellation. Supports O(1) insertion and refits.
#[derive(Debug, Clone)]
pub struct PlaneAccumulator {
    anchor: Vec3,
    count: usize,
    sum: Vec3,
    sum_outer: Matrix3<f64>,
}

impl PlaneAccumulator {
    pub fn new(anchor: Point3<f64>) -> Self {
        Self {
            anchor: anchor.coords,
            count: 0,
            sum: Vec3::zeros(),
            sum_outer: Matrix3::zeros(),
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[inline]
    pub fn push(&mut self, p: &Point3<f64>) {
        let d = p.coords - self.anchor;
        self.count += 1;
        self.sum += d;
        self.sum_outer += d * d.transpose();
    }

    /// Fit including one extra point without mutating the accumulator.
    pub fn fit_with(&self, p: &Point3<f64>) -> Result<PlaneParams, GeomError> {
        let mut tmp = self.clone();
        tmp.push(p);
        tmp.fit()
    }

    pub fn fit(&self) -> Result<PlaneParams, GeomError> {
        if self.count < 3 {
            return Err(GeomError::DegenerateInput("fewer than 3 points"));
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        let cov = self.sum_outer / n - mean * mean.transpose();
        let centroid = mean + self.anchor;
        plane_from_moments(&centroid, &cov)
    }
}

fn plane_from_moments(centroid: &Vec3, cov: &Matrix3<f64>) -> Result<PlaneParams, GeomError> {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lo, mid, hi) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if !(hi > 0.0) || mid <= 1e-12 * hi || !lo.is_finite() {
        return Err(GeomError::DegenerateInput("points are collinear or coincident"));
    }
    let normal: Vec3 = eig.eigenvectors.column(order[0]).normalize();
    Ok(orient_plane(
        PlaneParams {
            normal,
            offset: -normal.dot(centroid),
        },
        centroid.norm(),
    ))
}

fn orient_plane(plane: PlaneParams, scale: f64) -> PlaneParams {
    let eps = 1e-12 * scale.max(1.0);
    if plane.offset > eps {
        return plane.flipped();
    }
    if plane.offset < -eps {
        return plane;
    }
    let n = plane.normal;
    for c in [n.z, n.y, n.x] {
        if c.abs() > 1e-12 {
            return if c < 0.0 { plane.flipped() } else { plane };
        }
    }
    plane
}
