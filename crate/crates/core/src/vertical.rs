//! Vertical translation from ground points against a terrain reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point3;
use crate::ground::GroundModel;
use crate::spatial::{Index2, Index3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerticalError {
    #[error("only {found} terrain samples matched ground points, need {required}")]
    InsufficientPairs { found: usize, required: usize },
    #[error("search radius must be positive")]
    InvalidRadius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerticalParams {
    pub radius: f64,
    pub min_pairs: usize,
    pub denoise_k: usize,
    pub denoise_sigma: f64,
}

impl Default for VerticalParams {
    fn default() -> Self {
        Self {
            radius: 0.5,
            min_pairs: 10,
            denoise_k: 8,
            denoise_sigma: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerticalEstimate {
    /// Add to cloud heights to align them with the terrain.
    pub t_z: f64,
    pub n_pairs: usize,
    pub deltas: Vec<f64>,
}

/// Minimum cloud points around a terrain sample for it to form a pair.
const MIN_NEIGHBOURS: usize = 3;

pub fn estimate_tz(
    ground_points: &[Point3<f64>],
    ground: &dyn GroundModel,
    radius: f64,
    min_pairs: usize,
) -> Result<VerticalEstimate, VerticalError> {
    if !(radius > 0.0) {
        return Err(VerticalError::InvalidRadius);
    }
    if ground_points.is_empty() {
        return Err(VerticalError::InsufficientPairs {
            found: 0,
            required: min_pairs,
        });
    }
    let index = Index2::new(ground_points);
    let refs = ground.reference_points();
    let deltas: Vec<f64> = refs
        .par_iter()
        .map(|r| {
            let nb = index.within(r.x, r.y, radius);
            (nb.len() >= MIN_NEIGHBOURS).then(|| {
                let mean = nb.iter().map(|&i| ground_points[i].z).sum::<f64>() / nb.len() as f64;
                r.z - mean
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    if deltas.len() < min_pairs.max(1) {
        return Err(VerticalError::InsufficientPairs {
            found: deltas.len(),
            required: min_pairs,
        });
    }
    let t_z = deltas.iter().sum::<f64>() / deltas.len() as f64;
    Ok(VerticalEstimate {
        t_z,
        n_pairs: deltas.len(),
        deltas,
    })
}

/// Mean distance of every point to its `k` nearest neighbours.
pub fn knn_mean_distances(points: &[Point3<f64>], k: usize) -> Vec<f64> {
    let index = Index3::new(points);
    points
        .par_iter()
        .map(|p| {
            // The query point itself is the first hit.
            let nb = index.knn_distances(p, k + 1);
            nb.iter().skip(1).map(|(_, d)| d).sum::<f64>() / k as f64
        })
        .collect()
}

/// Statistical outlier removal: drops points whose mean k-NN distance
/// exceeds the global mean by more than `sigma_mult` standard deviations.
/// Returns the kept indices in ascending order.
pub fn denoise_ground(points: &[Point3<f64>], k: usize, sigma_mult: f64) -> Vec<usize> {
    assert!(k >= 3, "denoising needs k >= 3");
    if points.len() < k + 1 {
        return (0..points.len()).collect();
    }
    let stat = knn_mean_distances(points, k);
    let threshold = outlier_threshold(&stat, sigma_mult);
    (0..points.len()).filter(|&i| stat[i] <= threshold).collect()
}

fn outlier_threshold(stat: &[f64], sigma_mult: f64) -> f64 {
    let n = stat.len() as f64;
    let mean = stat.iter().sum::<f64>() / n;
    let var = stat.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    mean + sigma_mult * var.sqrt()
}
