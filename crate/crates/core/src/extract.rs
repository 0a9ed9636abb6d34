//! Plane segment extraction inside a plinth band: multi-plane RANSAC,
//! normal clustering, seed growth under geometric consistency, and a final
//! least-squares refit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    fit_plane, rotation_angle_between_normals, verticality_angle, PlaneAccumulator, PlaneParams, Point3,
};
use crate::io::WallSurface;
use crate::ransac::ransac_largest_plane;
use crate::seed::derive_seed_n;

/// Maximum angle between an extracted segment and its model wall, degrees.
pub const MODEL_NORMAL_GATE: f64 = 30.0;
pub const DEFAULT_REFIT_BATCH: usize = 64;

const MAX_CANDIDATE_ROUNDS: usize = 64;
const MAX_FINAL_ROUNDS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("no facade-like plane found")]
    NoCandidates,
    #[error("segment normal of wall {0} deviates from the model normal")]
    ModelNormalMismatch(String),
    #[error("segment degenerated to fewer than three points")]
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcParams {
    pub t_dis: f64,
    /// Degrees.
    pub t_theta: f64,
}

impl GcParams {
    pub fn from_alpha(t_dis: f64, t_alpha: f64) -> Self {
        Self {
            t_dis,
            t_theta: 0.5 * t_alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthMode {
    /// Refit the seed plane after every `n` acceptances.
    Batched(usize),
    /// Refit after every acceptance.
    PerPoint,
}

impl Default for GrowthMode {
    fn default() -> Self {
        GrowthMode::Batched(DEFAULT_REFIT_BATCH)
    }
}

impl GrowthMode {
    fn batch(self) -> usize {
        match self {
            GrowthMode::Batched(n) => n.max(1),
            GrowthMode::PerPoint => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractParams {
    pub t_dis: f64,
    pub t_alpha: f64,
    /// `None` selects `max(50, 1% of |S_i|)`.
    pub min_inliers: Option<usize>,
    pub growth: GrowthMode,
}

impl ExtractParams {
    pub fn new(t_dis: f64, t_alpha: f64) -> Self {
        Self {
            t_dis,
            t_alpha,
            min_inliers: None,
            growth: GrowthMode::default(),
        }
    }

    pub fn gc(&self) -> GcParams {
        GcParams::from_alpha(self.t_dis, self.t_alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePlane {
    pub plane: PlaneParams,
    pub inliers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedPlane {
    pub plane: PlaneParams,
    /// Ascending.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSegment {
    /// Ascending indices into the point set the segment was extracted from.
    pub indices: Vec<usize>,
    pub plane: PlaneParams,
    pub wall_id: String,
    /// Points accepted by the growth step.
    pub grown: usize,
}

/// Repeated RANSAC with inlier removal; keeps facade-like planes only.
pub fn extract_candidate_planes(
    points: &[Point3<f64>],
    t_dis: f64,
    t_alpha: f64,
    min_inliers: usize,
    seed: u64,
) -> Result<Vec<CandidatePlane>, ExtractError> {
    assert!(!points.is_empty(), "candidate extraction needs points");
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut out = Vec::new();
    for round in 0..MAX_CANDIDATE_ROUNDS {
        let pts: Vec<Point3<f64>> = remaining.iter().map(|&i| points[i]).collect();
        let Ok(fit) = ransac_largest_plane(&pts, t_dis, min_inliers, derive_seed_n(seed, round as u64))
        else {
            break;
        };
        let inliers: Vec<usize> = fit.inliers.iter().map(|&k| remaining[k]).collect();
        let mut taken = vec![false; remaining.len()];
        for &k in &fit.inliers {
            taken[k] = true;
        }
        let mut k = 0;
        remaining.retain(|_| {
            k += 1;
            !taken[k - 1]
        });
        if verticality_angle(&fit.plane) > t_alpha {
            out.push(CandidatePlane {
                plane: fit.plane,
                inliers,
            });
        }
        if remaining.len() < 3 {
            break;
        }
    }
    if out.is_empty() {
        return Err(ExtractError::NoCandidates);
    }
    Ok(out)
}

/// Greedy normal clustering in descending inlier count; the founding
/// plane's normal represents its cluster.
pub fn cluster_and_merge(
    points: &[Point3<f64>],
    candidates: &[CandidatePlane],
    t_theta: f64,
) -> Vec<MergedPlane> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[b].inliers.len().cmp(&candidates[a].inliers.len()));
    let mut clusters: Vec<(PlaneParams, Vec<usize>)> = Vec::new();
    for c in order {
        let cand = &candidates[c];
        match clusters
            .iter_mut()
            .find(|(rep, _)| rotation_angle_between_normals(&rep.normal, &cand.plane.normal) <= t_theta)
        {
            Some((_, members)) => members.extend_from_slice(&cand.inliers),
            None => clusters.push((cand.plane, cand.inliers.clone())),
        }
    }
    clusters
        .into_iter()
        .map(|(rep, mut idx)| {
            idx.sort_unstable();
            idx.dedup();
            let pts: Vec<Point3<f64>> = idx.iter().map(|&i| points[i]).collect();
            MergedPlane {
                plane: fit_plane(&pts).unwrap_or(rep),
                indices: idx,
            }
        })
        .collect()
}

fn mean_residual(points: &[Point3<f64>], m: &MergedPlane) -> f64 {
    m.indices
        .iter()
        .map(|&i| m.plane.distance(&points[i]))
        .sum::<f64>()
        / m.indices.len() as f64
}

/// Index of the seed: most points, then smaller mean residual.
pub fn select_seed(points: &[Point3<f64>], merged: &[MergedPlane]) -> usize {
    let mut best = 0;
    for k in 1..merged.len() {
        let (a, b) = (&merged[k], &merged[best]);
        if a.indices.len() > b.indices.len()
            || (a.indices.len() == b.indices.len() && mean_residual(points, a) < mean_residual(points, b))
        {
            best = k;
        }
    }
    best
}

/// Grows the seed plane with consistent points from the other merged
/// planes, then refits and drops points beyond `t_dis` until stable.
pub fn grow_seed_plane(
    points: &[Point3<f64>],
    merged: &[MergedPlane],
    gc: &GcParams,
    mode: GrowthMode,
) -> Result<(Vec<usize>, PlaneParams, usize), ExtractError> {
    assert!(!merged.is_empty(), "growth needs at least one merged plane");
    let s = select_seed(points, merged);
    let seed = &merged[s];
    let mut members = seed.indices.clone();
    let mut acc = PlaneAccumulator::new(points[members[0]]);
    for &i in &members {
        acc.push(&points[i]);
    }
    let mut omega = seed.plane;
    let mut candidates: Vec<usize> = merged
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != s)
        .flat_map(|(_, m)| m.indices.iter().copied())
        .collect();
    candidates.sort_unstable();
    candidates.dedup();

    let batch = mode.batch();
    let mut pending = 0;
    let mut grown = 0;
    for i in candidates {
        let p = &points[i];
        if omega.distance(p) >= gc.t_dis {
            continue;
        }
        let Ok(trial) = acc.fit_with(p) else { continue };
        if rotation_angle_between_normals(&omega.normal, &trial.normal) >= gc.t_theta {
            continue;
        }
        acc.push(p);
        members.push(i);
        grown += 1;
        pending += 1;
        if pending == batch {
            omega = acc.fit().unwrap_or(omega);
            pending = 0;
        }
    }
    members.sort_unstable();

    let (members, plane) = refit_and_trim(points, members, gc.t_dis)?;
    Ok((members, plane, grown))
}

fn refit_and_trim(
    points: &[Point3<f64>],
    mut members: Vec<usize>,
    t_dis: f64,
) -> Result<(Vec<usize>, PlaneParams), ExtractError> {
    for _ in 0..MAX_FINAL_ROUNDS {
        let pts: Vec<Point3<f64>> = members.iter().map(|&i| points[i]).collect();
        let plane = fit_plane(&pts).map_err(|_| ExtractError::Degenerate)?;
        let kept: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| plane.distance(&points[i]) <= t_dis)
            .collect();
        if kept.len() == members.len() {
            return Ok((members, plane));
        }
        if kept.len() < 3 {
            return Err(ExtractError::Degenerate);
        }
        members = kept;
    }
    // Not yet stable: filter once more against the last plane and stop, so
    // every member is still within t_dis of the returned plane.
    let pts: Vec<Point3<f64>> = members.iter().map(|&i| points[i]).collect();
    let plane = fit_plane(&pts).map_err(|_| ExtractError::Degenerate)?;
    members.retain(|&i| plane.distance(&points[i]) <= t_dis);
    if members.len() < 3 {
        return Err(ExtractError::Degenerate);
    }
    Ok((members, plane))
}

/// End-to-end segment extraction for one wall from its plinth band.
pub fn extract_wall_segment(
    points: &[Point3<f64>],
    wall: &WallSurface,
    params: &ExtractParams,
    seed: u64,
) -> Result<PlaneSegment, ExtractError> {
    if points.len() < 3 {
        return Err(ExtractError::NoCandidates);
    }
    let min_inliers = params
        .min_inliers
        .unwrap_or_else(|| crate::plinth::default_min_inliers(points.len()));
    let candidates = extract_candidate_planes(points, params.t_dis, params.t_alpha, min_inliers, seed)?;
    let gc = params.gc();
    let merged = cluster_and_merge(points, &candidates, gc.t_theta);
    let (indices, plane, grown) = grow_seed_plane(points, &merged, &gc, params.growth)?;
    if rotation_angle_between_normals(&plane.normal, &wall.plane.normal) > MODEL_NORMAL_GATE {
        return Err(ExtractError::ModelNormalMismatch(wall.id.clone()));
    }
    Ok(PlaneSegment {
        indices,
        plane,
        wall_id: wall.id.clone(),
        grown,
    })
}
