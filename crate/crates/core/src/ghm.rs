//! Gauss–Helmert adjustment of point-on-plane conditions
//! `n_i·(R(q)·x + t) + d_i = 0` for a unit quaternion and translation.
//!
//! Walls alone leave `t_z` unobservable; the pseudo-plane adds the
//! parameter-only constraint `t_z = 0`, so rotation and horizontal
//! translation are estimated independently of any ground information.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    rotation_angle_between_normals, verticality_angle, PlaneParams, Point3, Quaternion, RigidTransform, Vec3,
};

/// Walls closer to parallel than this (degrees) do not fix a rotation.
pub const PARALLEL_TOLERANCE_DEG: f64 = 1.0;
/// Minimum vertical spread of wall points for tilt observability, meters.
pub const MIN_VERTICAL_SPREAD: f64 = 0.1;
const RANK_TOLERANCE: f64 = 1e-12;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrespondenceKind {
    Wall,
    Ground,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub model_plane: PlaneParams,
    pub points: Vec<Point3<f64>>,
    pub wall_id: String,
    pub kind: CorrespondenceKind,
}

impl Correspondence {
    pub fn wall(id: impl Into<String>, model_plane: PlaneParams, points: Vec<Point3<f64>>) -> Self {
        Self {
            model_plane,
            points,
            wall_id: id.into(),
            kind: CorrespondenceKind::Wall,
        }
    }

    pub fn ground(id: impl Into<String>, model_plane: PlaneParams, points: Vec<Point3<f64>>) -> Self {
        Self {
            kind: CorrespondenceKind::Ground,
            ..Self::wall(id, model_plane, points)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Append the `t_z = 0` constraint; ground correspondences are ignored.
    pub pseudo_plane: bool,
    /// When false, `t_z` is dropped from the parameter vector entirely.
    pub estimate_tz: bool,
    pub initial: RigidTransform,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-10,
            pseudo_plane: true,
            estimate_tz: true,
            initial: RigidTransform::identity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    /// With the pseudo-plane, `t_z` is exactly zero here.
    pub transform: RigidTransform,
    pub variance_factor: f64,
    pub redundancy: usize,
    pub rms: Vec<(String, f64)>,
    pub iterations: usize,
    pub converged: bool,
    pub raw_t_z: f64,
    /// Sum of squared misclosures at each iterate, starting with the initial one.
    pub misclosure_history: Vec<f64>,
    pub pseudo_plane: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GhmError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("normal equations are rank deficient")]
    RankDeficient,
    #[error("no convergence after {max_iter} iterations")]
    NoConvergence {
        max_iter: usize,
        last: Box<SolverReport>,
    },
}

/// One linearized system: condition rows `A·dx + B·v + w = 0` plus the
/// parameter constraints `C·dx + g = 0`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    /// Observation Jacobian per point row (pseudo-plane row excluded).
    pub b: Vec<Vec3>,
    pub c: DMatrix<f64>,
    pub w: DVector<f64>,
}

#[inline]
fn condition(plane: &PlaneParams, r: &nalgebra::Matrix3<f64>, t: &Vec3, x: &Vec3) -> f64 {
    plane.normal.dot(&(r * x + t)) + plane.offset
}

// Parameter row ∂f/∂(q0..q3, tx, ty, tz).
#[inline]
fn a_row(plane: &PlaneParams, dr: &[nalgebra::Matrix3<f64>; 4], x: &Vec3) -> [f64; 7] {
    let n = plane.normal;
    [
        n.dot(&(dr[0] * x)),
        n.dot(&(dr[1] * x)),
        n.dot(&(dr[2] * x)),
        n.dot(&(dr[3] * x)),
        n.x,
        n.y,
        n.z,
    ]
}

/// Gradient of `‖q‖` with respect to the full parameter vector.
pub fn norm_gradient(q: &Quaternion) -> [f64; 7] {
    let s = q.norm();
    [q.q0 / s, q.q1 / s, q.q2 / s, q.q3 / s, 0.0, 0.0, 0.0]
}

fn used(corrs: &[Correspondence], pseudo_plane: bool) -> impl Iterator<Item = &Correspondence> {
    corrs
        .iter()
        .filter(move |c| !(pseudo_plane && c.kind == CorrespondenceKind::Ground))
}

// Per point: (a, b, w, m) kept for the correction update.
type PointRow = ([f64; 7], Vec3, f64, f64);

/// Rejects inputs whose rotation or horizontal translation is unobservable.
pub fn check_geometry(corrs: &[Correspondence]) -> Result<(), GhmError> {
    let normals: Vec<Vec3> = corrs.iter().map(|c| c.model_plane.normal).collect();
    if normals.len() < 2
        || normals
            .iter()
            .all(|n| rotation_angle_between_normals(n, &normals[0]) <= PARALLEL_TOLERANCE_DEG)
    {
        return Err(GhmError::DegenerateGeometry(
            "all model normals are parallel".into(),
        ));
    }
    let walls: Vec<&Correspondence> = corrs
        .iter()
        .filter(|c| c.kind == CorrespondenceKind::Wall && verticality_angle(&c.model_plane) > 45.0)
        .filter(|c| {
            let (lo, hi) = c
                .points
                .iter()
                .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
            hi - lo >= MIN_VERTICAL_SPREAD
        })
        .collect();
    let pair = walls.iter().enumerate().any(|(i, a)| {
        walls[i + 1..].iter().any(|b| {
            rotation_angle_between_normals(&a.model_plane.normal, &b.model_plane.normal)
                > PARALLEL_TOLERANCE_DEG
        })
    });
    if !pair {
        return Err(GhmError::DegenerateGeometry(
            "fewer than two non-parallel walls with enough vertical extent".into(),
        ));
    }
    Ok(())
}

/// Linearizes all conditions at `x0` with zero observation corrections.
pub fn assemble_system(
    corrs: &[Correspondence],
    include_pseudo_plane: bool,
    x0: &RigidTransform,
) -> Result<LinearSystem, GhmError> {
    check_geometry(corrs)?;
    let q = x0.rotation;
    let r = q.to_matrix();
    let dr = q.matrix_derivatives();
    let t = x0.translation;
    let rows: usize = used(corrs, include_pseudo_plane).map(|c| c.points.len()).sum();
    let total = rows + usize::from(include_pseudo_plane);
    let mut a = DMatrix::zeros(total, 7);
    let mut w = DVector::zeros(total);
    let mut b = Vec::with_capacity(rows);
    let mut k = 0;
    for c in used(corrs, include_pseudo_plane) {
        let bn = r.transpose() * c.model_plane.normal;
        for p in &c.points {
            let row = a_row(&c.model_plane, &dr, &p.coords);
            for (j, v) in row.iter().enumerate() {
                a[(k, j)] = *v;
            }
            w[k] = condition(&c.model_plane, &r, &t, &p.coords);
            b.push(bn);
            k += 1;
        }
    }
    if include_pseudo_plane {
        a[(k, 6)] = 1.0;
    }
    let c = DMatrix::from_row_slice(1, 7, &norm_gradient(&q));
    Ok(LinearSystem { a, b, c, w })
}

struct Params {
    q: Quaternion,
    t: Vec3,
}

pub fn solve(corrs: &[Correspondence], opts: &SolveOptions) -> Result<SolverReport, GhmError> {
    check_geometry(corrs)?;
    let active: Vec<&Correspondence> = used(corrs, opts.pseudo_plane).collect();
    let np = if opts.estimate_tz { 7 } else { 6 };
    let nc = 1 + usize::from(opts.pseudo_plane && opts.estimate_tz);
    let n_obs: usize = active.iter().map(|c| c.points.len()).sum();
    let redundancy = (n_obs + nc)
        .checked_sub(np)
        .filter(|&r| r > 0)
        .ok_or_else(|| GhmError::DegenerateGeometry("no redundancy".into()))?;
    let scale = 1.0 / n_obs as f64;

    let mut x = Params {
        q: opts.initial.rotation,
        t: opts.initial.translation,
    };
    // Current observation estimates x̂ = x + v.
    let mut xhat: Vec<Vec<Vec3>> = active
        .iter()
        .map(|c| c.points.iter().map(|p| p.coords).collect())
        .collect();
    let mut history = vec![misclosure(&active, &x)];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let r = x.q.to_matrix();
        let dr = x.q.matrix_derivatives();
        let mut n_mat = DMatrix::<f64>::zeros(np, np);
        let mut u = DVector::<f64>::zeros(np);
        let mut rows: Vec<Vec<PointRow>> = Vec::with_capacity(active.len());
        for (c, xs) in active.iter().zip(&xhat) {
            let bn = r.transpose() * c.model_plane.normal;
            let m = bn.norm_squared();
            let mut cr = Vec::with_capacity(xs.len());
            for (p, xh) in c.points.iter().zip(xs) {
                let a = a_row(&c.model_plane, &dr, xh);
                let w = condition(&c.model_plane, &r, &x.t, xh) + bn.dot(&(p.coords - xh));
                for i in 0..np {
                    let ai = a[i] / m;
                    u[i] += ai * w;
                    for j in 0..np {
                        n_mat[(i, j)] += ai * a[j];
                    }
                }
                cr.push((a, bn, w, m));
            }
            rows.push(cr);
        }

        let dim = np + nc;
        let mut k = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        k.view_mut((0, 0), (np, np)).copy_from(&(n_mat * scale));
        for i in 0..np {
            rhs[i] = -u[i] * scale;
        }
        let grad = norm_gradient(&x.q);
        for j in 0..4 {
            k[(np, j)] = grad[j];
            k[(j, np)] = grad[j];
        }
        rhs[np] = -(x.q.norm() - 1.0);
        if nc == 2 {
            k[(np + 1, 6)] = 1.0;
            k[(6, np + 1)] = 1.0;
            rhs[np + 1] = -x.t.z;
        }
        if iterations == 1 {
            let sv = k.clone().singular_values();
            let (lo, hi) = sv
                .iter()
                .fold((f64::MAX, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
            if !(lo > RANK_TOLERANCE * hi) {
                return Err(GhmError::RankDeficient);
            }
        }
        let sol = k.lu().solve(&rhs).ok_or(GhmError::RankDeficient)?;
        let mut dx = [0.0; 7];
        for i in 0..np {
            dx[i] = sol[i];
        }

        for ((c, xs), cr) in active.iter().zip(xhat.iter_mut()).zip(&rows) {
            for ((p, xh), (a, bn, w, m)) in c.points.iter().zip(xs.iter_mut()).zip(cr) {
                let adx: f64 = a.iter().zip(&dx).map(|(ai, di)| ai * di).sum();
                let v = -bn * ((adx + w) / m);
                *xh = p.coords + v;
            }
        }
        x.q = Quaternion::new(x.q.q0 + dx[0], x.q.q1 + dx[1], x.q.q2 + dx[2], x.q.q3 + dx[3]).normalized();
        x.t += Vec3::new(dx[4], dx[5], dx[6]);
        history.push(misclosure(&active, &x));
        let step = dx.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if step < opts.tol {
            converged = true;
            break;
        }
    }

    let vtv: f64 = active
        .iter()
        .zip(&xhat)
        .flat_map(|(c, xs)| {
            c.points
                .iter()
                .zip(xs)
                .map(|(p, xh)| (xh - p.coords).norm_squared())
        })
        .sum();
    let raw_t_z = x.t.z;
    let mut t = x.t;
    if opts.pseudo_plane {
        t.z = 0.0;
    }
    let transform = RigidTransform {
        rotation: x.q.canonical(),
        translation: t,
    };
    let rms = corrs
        .iter()
        .map(|c| (c.wall_id.clone(), rms_residual(c, &transform)))
        .collect();
    let report = SolverReport {
        transform,
        variance_factor: vtv / redundancy as f64,
        redundancy,
        rms,
        iterations,
        converged,
        raw_t_z,
        misclosure_history: history,
        pseudo_plane: opts.pseudo_plane,
    };
    if !converged {
        return Err(GhmError::NoConvergence {
            max_iter: opts.max_iter,
            last: Box::new(report),
        });
    }
    Ok(report)
}

fn misclosure(active: &[&Correspondence], x: &Params) -> f64 {
    let r = x.q.to_matrix();
    active
        .iter()
        .flat_map(|c| c.points.iter().map(move |p| (c, p)))
        .map(|(c, p)| condition(&c.model_plane, &r, &x.t, &p.coords).powi(2))
        .sum()
}

/// Root-mean-square point-to-model-plane distance after `t`.
pub fn rms_residual(c: &Correspondence, t: &RigidTransform) -> f64 {
    if c.points.is_empty() {
        return 0.0;
    }
    let ss: f64 = c
        .points
        .iter()
        .map(|p| c.model_plane.signed_distance(&t.apply(p)).powi(2))
        .sum();
    (ss / c.points.len() as f64).sqrt()
}

/// Maximum relative deviation `|analytic − fd| / max(|analytic|, |fd|, 1)`
/// of the A, B and C Jacobians against central differences.
pub fn jacobian_check(samples: &[(PlaneParams, Point3<f64>)], x0: &RigidTransform) -> f64 {
    let h = FD_STEP;
    let q = x0.rotation;
    let params = [
        q.q0,
        q.q1,
        q.q2,
        q.q3,
        x0.translation.x,
        x0.translation.y,
        x0.translation.z,
    ];
    let f = |p: &[f64; 7], plane: &PlaneParams, x: &Vec3| {
        let qq = Quaternion::new(p[0], p[1], p[2], p[3]);
        condition(plane, &qq.to_matrix(), &Vec3::new(p[4], p[5], p[6]), x)
    };
    let c = |p: &[f64; 7]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3]).sqrt();
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    let mut worst = 0.0f64;

    let grad = norm_gradient(&q);
    for j in 0..7 {
        let (mut hi, mut lo) = (params, params);
        hi[j] += h;
        lo[j] -= h;
        worst = worst.max(rel(grad[j], (c(&hi) - c(&lo)) / (2.0 * h)));
    }
    let r = q.to_matrix();
    let dr = q.matrix_derivatives();
    for (plane, p) in samples {
        let x = p.coords;
        let a = a_row(plane, &dr, &x);
        for j in 0..7 {
            let (mut hi, mut lo) = (params, params);
            hi[j] += h;
            lo[j] -= h;
            let fd = (f(&hi, plane, &x) - f(&lo, plane, &x)) / (2.0 * h);
            worst = worst.max(rel(a[j], fd));
        }
        let b = r.transpose() * plane.normal;
        for j in 0..3 {
            let mut e = Vec3::zeros();
            e[j] = h;
            let fd = (f(&params, plane, &(x + e)) - f(&params, plane, &(x - e))) / (2.0 * h);
            worst = worst.max(rel(b[j], fd));
        }
    }
    worst
}
