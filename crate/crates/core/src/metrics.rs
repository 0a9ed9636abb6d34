//! Registration error at check points: mean and sample standard deviation
//! of signed cylinder-projection distances to the reference model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{fit_plane, Point3, Vec3};
use crate::ground::GroundModel;
use crate::io::{MetricsSummary, WallSurface};
use crate::spatial::Index3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no cloud points inside the projection cylinder at {} check point(s)", .0.len())]
    NoNeighbors(Vec<Point3<f64>>),
    #[error("at least two check points are needed, got {0}")]
    TooFewCheckPoints(usize),
    #[error("cannot estimate a reference normal: {0}")]
    NoNormal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderParams {
    pub radius: f64,
    pub max_depth: f64,
    pub normal_radius: f64,
}

impl Default for CylinderParams {
    fn default() -> Self {
        Self {
            radius: 0.1,
            max_depth: 1.0,
            normal_radius: 0.3,
        }
    }
}

/// Location on the reference model plus the reference normal there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckPoint {
    pub position: Point3<f64>,
    pub normal: Vec3,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckPointSet {
    pub horizontal: Vec<CheckPoint>,
    pub vertical: Vec<CheckPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub err_h: f64,
    pub std_h: f64,
    pub err_v: f64,
    pub std_v: f64,
    pub distances_h: Vec<f64>,
    pub distances_v: Vec<f64>,
}

impl MetricsReport {
    pub fn summary(&self) -> MetricsSummary {
        MetricsSummary {
            err_h: self.err_h,
            std_h: self.std_h,
            err_v: self.err_v,
            std_v: self.std_v,
            n_h: self.distances_h.len(),
            n_v: self.distances_v.len(),
        }
    }
}

/// Normal of a plane fitted to reference samples around `p`.
pub fn reference_normal(
    p: &Point3<f64>,
    reference: &[Point3<f64>],
    index: &Index3,
    radius: f64,
) -> Result<Vec3, MetricsError> {
    let nb: Vec<Point3<f64>> = index
        .within(p, radius)
        .into_iter()
        .map(|i| reference[i])
        .collect();
    if nb.len() < 3 {
        return Err(MetricsError::NoNormal(format!("{} samples near {p:?}", nb.len())));
    }
    fit_plane(&nb)
        .map(|pl| pl.normal)
        .map_err(|e| MetricsError::NoNormal(e.to_string()))
}

/// Mean signed axial offset of the cloud points inside a cylinder around
/// the check point's normal. `None` when the cylinder is empty.
pub fn m3c2_style_distance(
    check: &CheckPoint,
    cloud: &[Point3<f64>],
    index: &Index3,
    params: &CylinderParams,
) -> Option<f64> {
    let n = check.normal.normalize();
    let reach = (params.radius.powi(2) + params.max_depth.powi(2)).sqrt();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in index.within(&check.position, reach) {
        let d = cloud[i] - check.position;
        let axial = n.dot(&d);
        let radial2 = d.norm_squared() - axial * axial;
        if axial.abs() <= params.max_depth && radial2 <= params.radius * params.radius {
            sum += axial;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Mean and sample (n−1) standard deviation.
pub fn mean_and_std(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn distances(
    set: &[CheckPoint],
    cloud: &[Point3<f64>],
    index: &Index3,
    params: &CylinderParams,
) -> (Vec<f64>, Vec<Point3<f64>>) {
    let res: Vec<Option<f64>> = set
        .par_iter()
        .map(|c| m3c2_style_distance(c, cloud, index, params))
        .collect();
    let mut ok = Vec::with_capacity(res.len());
    let mut missing = Vec::new();
    for (c, r) in set.iter().zip(res) {
        match r {
            Some(d) => ok.push(d),
            None => missing.push(c.position),
        }
    }
    (ok, missing)
}

/// Empty sets are allowed and report zero; a non-empty set needs ≥ 2 points.
pub fn compute_metrics(
    check: &CheckPointSet,
    cloud: &[Point3<f64>],
    index: &Index3,
    params: &CylinderParams,
) -> Result<MetricsReport, MetricsError> {
    for set in [&check.horizontal, &check.vertical] {
        if set.len() == 1 {
            return Err(MetricsError::TooFewCheckPoints(1));
        }
    }
    let (dh, mut missing) = distances(&check.horizontal, cloud, index, params);
    let (dv, mv) = distances(&check.vertical, cloud, index, params);
    missing.extend(mv);
    if !missing.is_empty() {
        return Err(MetricsError::NoNeighbors(missing));
    }
    let stats = |d: &[f64]| if d.is_empty() { (0.0, 0.0) } else { mean_and_std(d) };
    let (err_h, std_h) = stats(&dh);
    let (err_v, std_v) = stats(&dv);
    Ok(MetricsReport {
        err_h,
        std_h,
        err_v,
        std_v,
        distances_h: dh,
        distances_v: dv,
    })
}

/// Drops check points with empty cylinders and retries once.
pub fn compute_metrics_dropping_empty(
    check: &CheckPointSet,
    cloud: &[Point3<f64>],
    index: &Index3,
    params: &CylinderParams,
) -> Result<MetricsReport, MetricsError> {
    match compute_metrics(check, cloud, index, params) {
        Err(MetricsError::NoNeighbors(bad)) => {
            let keep = |c: &&CheckPoint| !bad.contains(&c.position);
            let pruned = CheckPointSet {
                horizontal: check.horizontal.iter().filter(keep).copied().collect(),
                vertical: check.vertical.iter().filter(keep).copied().collect(),
            };
            compute_metrics(&pruned, cloud, index, params)
        }
        other => other,
    }
}

/// Deterministic check points: along each wall 0.25 m above its base every
/// 0.5 m (0.5 m clear of the ends), and on the ground 1 m outside each wall
/// at the same stations spaced 2 m apart.
pub fn generate_check_points(walls: &[WallSurface], ground: Option<&dyn GroundModel>) -> CheckPointSet {
    let mut set = CheckPointSet::default();
    let all: Vec<&Point3<f64>> = walls.iter().flat_map(|w| &w.vertices).collect();
    let centre = all.iter().fold(Vec3::zeros(), |a, v| a + v.coords) / all.len().max(1) as f64;
    for w in walls {
        let n = w.plane.normal;
        if n.z.abs() > 0.1 {
            continue;
        }
        let h = Vec3::new(n.x, n.y, 0.0).normalize();
        let along = Vec3::new(-h.y, h.x, 0.0);
        let (mut u0, mut u1, mut zb) = (f64::MAX, f64::MIN, f64::MAX);
        for v in &w.vertices {
            let u = along.dot(&v.coords);
            u0 = u0.min(u);
            u1 = u1.max(u);
            zb = zb.min(v.z);
        }
        // Any point on the wall's base line.
        let foot = w.plane.project(&Point3::new(0.0, 0.0, zb));
        let base = foot.coords - along * along.dot(&foot.coords);
        let wall_centre =
            w.vertices.iter().fold(Vec3::zeros(), |a, v| a + v.coords) / w.vertices.len() as f64;
        let outward = if h.dot(&(wall_centre - centre)) < 0.0 {
            -1.0
        } else {
            1.0
        };
        let mut k = 0;
        loop {
            let u = u0 + 0.5 + 0.5 * k as f64;
            if u > u1 - 0.5 + 1e-9 {
                break;
            }
            let on_wall = base + along * u;
            let pos = w.plane.project(&Point3::from(on_wall + Vec3::z() * 0.25));
            set.horizontal.push(CheckPoint {
                position: pos,
                normal: n,
            });
            if let Some(g) = ground {
                if k % 4 == 0 {
                    let q = on_wall + h * outward;
                    if let (Some(z), Some(gn)) = (g.height_at(q.x, q.y), g.normal_at(q.x, q.y)) {
                        set.vertical.push(CheckPoint {
                            position: Point3::new(q.x, q.y, z),
                            normal: gn,
                        });
                    }
                }
            }
            k += 1;
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Quaternion, RigidTransform};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn plane_cloud(f: impl Fn(f64, f64) -> Point3<f64>) -> Vec<Point3<f64>> {
        let mut pts = Vec::new();
        for i in 0..120 {
            for j in 0..120 {
                pts.push(f(-3.0 + i as f64 * 0.05, -3.0 + j as f64 * 0.05));
            }
        }
        pts
    }

    fn cp(x: f64, y: f64) -> CheckPoint {
        CheckPoint {
            position: Point3::new(x, y, 0.0),
            normal: Vec3::z(),
        }
    }

    #[test]
    fn coincident_and_offset_clouds() {
        let params = CylinderParams::default();
        let flat = plane_cloud(|x, y| Point3::new(x, y, 0.0));
        let idx = Index3::new(&flat);
        assert_eq!(
            m3c2_style_distance(&cp(0.3, 0.2), &flat, &idx, &params),
            Some(0.0)
        );
        let up = plane_cloud(|x, y| Point3::new(x, y, 0.02));
        let idx = Index3::new(&up);
        for (x, y) in [(0.0, 0.0), (1.0, -1.0), (-2.0, 2.0)] {
            assert_abs_diff_eq!(
                m3c2_style_distance(&cp(x, y), &up, &idx, &params).unwrap(),
                0.02,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn tilted_cloud_lever_arm() {
        // Cloud tilted 0.5° about the y axis through the origin.
        let a = 0.5f64.to_radians();
        let pts: Vec<_> = plane_cloud(|x, y| Point3::new(x, y, 0.0))
            .into_iter()
            .map(|p| Point3::new(p.x * 1.5, p.y, 0.0))
            .map(|p| {
                RigidTransform::new(Quaternion::from_axis_angle(&Vec3::y(), -a), Vec3::zeros()).apply(&p)
            })
            .collect();
        let idx = Index3::new(&pts);
        let d = m3c2_style_distance(&cp(2.0, 0.0), &pts, &idx, &CylinderParams::default()).unwrap();
        // Exact: the cloud plane is z = x·tan(a); the cylinder samples it
        // symmetrically about x = 2 so the mean height equals the centre's.
        assert!((d - 2.0 * a.tan()).abs() < 2e-4, "{d}");
        assert!((d - 0.0175).abs() < 5e-4);
    }

    #[test]
    fn hand_computed_statistics() {
        let d = [0.01, 0.02, 0.03];
        let (m, s) = mean_and_std(&d);
        let hand_mean = (0.01 + 0.02 + 0.03) / 3.0;
        let hand_std =
            (((0.01f64 - hand_mean).powi(2) + (0.02f64 - hand_mean).powi(2) + (0.03f64 - hand_mean).powi(2))
                / 2.0)
                .sqrt();
        assert_eq!(m.to_bits(), hand_mean.to_bits());
        assert_eq!(s.to_bits(), hand_std.to_bits());
        assert_abs_diff_eq!(m, 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(s, 0.01, epsilon = 1e-15);
        assert_eq!(mean_and_std(&[0.4; 5]).1, 0.0);
    }

    #[test]
    fn empty_cylinder_is_reported() {
        let flat = plane_cloud(|x, y| Point3::new(x, y, 0.0));
        let idx = Index3::new(&flat);
        let set = CheckPointSet {
            horizontal: vec![cp(0.0, 0.0), cp(50.0, 0.0), cp(1.0, 1.0)],
            vertical: vec![],
        };
        match compute_metrics(&set, &flat, &idx, &CylinderParams::default()) {
            Err(MetricsError::NoNeighbors(v)) => assert_eq!(v, vec![Point3::new(50.0, 0.0, 0.0)]),
            other => panic!("{other:?}"),
        }
        let r = compute_metrics_dropping_empty(&set, &flat, &idx, &CylinderParams::default()).unwrap();
        assert_eq!(r.distances_h.len(), 2);
    }

    #[test]
    fn perfect_registration_is_zero() {
        let w = WallSurface::new(
            "w",
            vec![
                Point3::new(-3.0, 0.0, 0.0),
                Point3::new(3.0, 0.0, 0.0),
                Point3::new(3.0, 0.0, 3.0),
                Point3::new(-3.0, 0.0, 3.0),
            ],
        )
        .unwrap();
        let dtm = crate::io::DtmGrid::from_fn(-5.0, -5.0, 1.0, 10, 10, |_, _| 0.0);
        let set = generate_check_points(std::slice::from_ref(&w), Some(&dtm));
        assert_eq!(set.horizontal.len(), 11);
        assert_eq!(set.vertical.len(), 3);
        assert!(set.vertical.iter().all(|c| c.position.y.abs() == 1.0));
        let mut cloud = plane_cloud(|x, z| Point3::new(x, 0.0, z + 3.0));
        cloud.extend(plane_cloud(|x, y| Point3::new(x, y - 2.0, 0.0)));
        let idx = Index3::new(&cloud);
        let r = compute_metrics(&set, &cloud, &idx, &CylinderParams::default()).unwrap();
        assert!(r.err_h.abs() < 1e-9 && r.err_v.abs() < 1e-9);
    }

    #[test]
    fn known_residual_offset() {
        let w = WallSurface::new(
            "w",
            vec![
                Point3::new(0.0, -3.0, 0.0),
                Point3::new(0.0, 3.0, 0.0),
                Point3::new(0.0, 3.0, 3.0),
                Point3::new(0.0, -3.0, 3.0),
            ],
        )
        .unwrap();
        let set = generate_check_points(std::slice::from_ref(&w), None);
        // Registered cloud left 4 mm along the wall normal.
        let n = w.plane.normal;
        let cloud: Vec<_> = plane_cloud(|y, z| Point3::new(0.0, y, z + 3.0))
            .into_iter()
            .map(|p| p + n * 0.004)
            .collect();
        let idx = Index3::new(&cloud);
        let r = compute_metrics(&set, &cloud, &idx, &CylinderParams::default()).unwrap();
        assert_abs_diff_eq!(r.err_h, 0.004, epsilon = 1e-3);
        assert_abs_diff_eq!(r.std_h, 0.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut d in prop::collection::vec(-0.1..0.1f64, 2..30), seed in any::<u64>()) {
            let (m0, s0) = mean_and_std(&d);
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            d.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (m1, s1) = mean_and_std(&d);
            prop_assert!((m0 - m1).abs() < 1e-15 && (s0 - s1).abs() < 1e-15);
        }
    }
}
