//! Iterative cut-off height estimation: shrinks a wall's neighbourhood
//! from the top until the lowest facade-like plane (the plinth) remains.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{verticality_angle, Point3};
use crate::ransac::{ransac_largest_plane, RansacError};
use crate::seed::derive_seed_n;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffRange {
    pub z_min: f64,
    pub z_max: f64,
}

impl CutoffRange {
    pub fn contains(&self, z: f64) -> bool {
        z >= self.z_min && z <= self.z_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizeParams {
    pub t_dis: f64,
    /// Degrees.
    pub t_alpha: f64,
    pub min_inliers: usize,
    pub max_rounds: usize,
}

impl LocalizeParams {
    /// `min_inliers = max(50, 1% of |N_i|)`, 20 rounds.
    pub fn for_neighbourhood(t_dis: f64, t_alpha: f64, n: usize) -> Self {
        Self {
            t_dis,
            t_alpha,
            min_inliers: default_min_inliers(n),
            max_rounds: 20,
        }
    }
}

pub fn default_min_inliers(n: usize) -> usize {
    50.max(n.div_ceil(100))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlinthError {
    #[error("the first extracted plane is not facade-like")]
    NoValidFacade,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    /// Ascending indices into the neighbourhood.
    pub indices: Vec<usize>,
    pub range: CutoffRange,
    /// Valid rounds performed.
    pub rounds: usize,
}

/// Nearest-rank percentile (`rank = ceil(p·n)`) of unsorted values.
pub fn nearest_rank(values: &mut [f64], p: f64) -> f64 {
    let n = values.len();
    let rank = ((p * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let (_, v, _) = values.select_nth_unstable_by(rank - 1, f64::total_cmp);
    *v
}

/// 10th and 90th nearest-rank percentiles.
pub fn percentile_band(z: &[f64]) -> (f64, f64) {
    assert!(z.len() >= 2, "percentile band needs at least two values");
    let mut buf = z.to_vec();
    (nearest_rank(&mut buf, 0.1), nearest_rank(&mut buf, 0.9))
}

pub fn localize_representative_subspace(
    points: &[Point3<f64>],
    params: &LocalizeParams,
    seed: u64,
) -> Result<Subspace, PlinthError> {
    let mut active: Vec<Point3<f64>> = points.to_vec();
    let mut last: Option<CutoffRange> = None;
    let mut rounds = 0;
    for round in 0..params.max_rounds {
        let fit = match ransac_largest_plane(
            &active,
            params.t_dis,
            params.min_inliers,
            derive_seed_n(seed, round as u64),
        ) {
            Ok(f) => f,
            Err(RansacError::NotFound(_)) => break,
        };
        if verticality_angle(&fit.plane) <= params.t_alpha {
            break;
        }
        let z: Vec<f64> = fit.inliers.iter().map(|&i| active[i].z).collect();
        let (z_min, z_max) = percentile_band(&z);
        last = Some(CutoffRange { z_min, z_max });
        rounds += 1;
        active.retain(|p| p.z <= z_min);
        if active.is_empty() {
            break;
        }
    }
    let range = last.ok_or(PlinthError::NoValidFacade)?;
    let indices = points
        .iter()
        .enumerate()
        .filter(|(_, p)| range.contains(p.z))
        .map(|(i, _)| i)
        .collect();
    Ok(Subspace {
        indices,
        range,
        rounds,
    })
}
