//! Fixed-budget RANSAC for the single dominant plane.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::{fit_plane, PlaneParams, Point3};

pub const DEFAULT_HYPOTHESES: usize = 1000;

// Points are scored against all hypotheses one cache-sized block at a time.
const BLOCK: usize = 4096;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum RansacError {
    #[error("no plane with at least {0} inliers")]
    NotFound(usize),
}

#[derive(Debug, Clone)]
pub struct PlaneFit {
    pub plane: PlaneParams,
    /// Ascending indices into the input slice.
    pub inliers: Vec<usize>,
}

/// Best-supported plane over a fixed number of three-point hypotheses,
/// refit once on its inliers (distance ≤ `t_dis`).
pub fn ransac_largest_plane(
    points: &[Point3<f64>],
    t_dis: f64,
    min_inliers: usize,
    seed: u64,
) -> Result<PlaneFit, RansacError> {
    ransac_with_budget(points, t_dis, min_inliers, seed, DEFAULT_HYPOTHESES)
}

pub fn ransac_with_budget(
    points: &[Point3<f64>],
    t_dis: f64,
    min_inliers: usize,
    seed: u64,
    hypotheses: usize,
) -> Result<PlaneFit, RansacError> {
    let n = points.len();
    if n < 3 || n < min_inliers {
        return Err(RansacError::NotFound(min_inliers));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planes: Vec<[f64; 4]> = Vec::with_capacity(hypotheses);
    for _ in 0..hypotheses {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        if k >= lo {
            k += 1;
        }
        if k >= hi {
            k += 1;
        }
        let (a, b, c) = (points[i], points[j], points[k]);
        let nrm = (b - a).cross(&(c - a));
        let len = nrm.norm();
        if !(len > 1e-12) {
            continue;
        }
        let nrm = nrm / len;
        planes.push([nrm.x, nrm.y, nrm.z, -nrm.dot(&a.coords)]);
    }
    if planes.is_empty() {
        return Err(RansacError::NotFound(min_inliers));
    }

    // Truncated-quadratic (MSAC) support: an inlier at distance d adds
    // 1 − (d/t)². Plain counting lets a plane tilted across two parallel
    // offset surfaces outscore either surface, since it collects a slice of
    // each at up to the full threshold distance.
    let inv_t2 = 1.0 / (t_dis * t_dis);
    let mut scores = vec![0.0f64; planes.len()];
    for chunk in points.chunks(BLOCK) {
        for (h, pl) in planes.iter().enumerate() {
            let mut s = 0.0;
            for p in chunk {
                let d = pl[0] * p.x + pl[1] * p.y + pl[2] * p.z + pl[3];
                let r = d * d * inv_t2;
                if r <= 1.0 {
                    s += 1.0 - r;
                }
            }
            scores[h] += s;
        }
    }
    // First hypothesis wins ties.
    let mut best = 0;
    for h in 1..scores.len() {
        if scores[h] > scores[best] {
            best = h;
        }
    }
    let pl = planes[best];
    let hyp = PlaneParams::new(crate::geom::Vec3::new(pl[0], pl[1], pl[2]), pl[3]);
    let first = inliers_of(points, &hyp, t_dis);
    let support: Vec<Point3<f64>> = first.iter().map(|&i| points[i]).collect();
    let plane = fit_plane(&support).unwrap_or(hyp);
    let inliers = inliers_of(points, &plane, t_dis);
    if inliers.len() < min_inliers {
        return Err(RansacError::NotFound(min_inliers));
    }
    Ok(PlaneFit { plane, inliers })
}

pub fn inliers_of(points: &[Point3<f64>], plane: &PlaneParams, t_dis: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| plane.distance(p) <= t_dis)
        .map(|(i, _)| i)
        .collect()
}
