use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geom::{RigidTransform, Vec3};

pub const REPORT_VERSION: u32 = 1;

/// How the vertical translation was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TzStage {
    Estimated {
        t_z: f64,
        n_pairs: usize,
        source: String,
    },
    Skipped,
    /// Vertical translation came out of a coupled 6-DoF solve.
    Coupled {
        t_z: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub iterations: usize,
    pub converged: bool,
    pub pseudo_plane: bool,
    pub variance_factor: f64,
    pub redundancy: usize,
    /// t_z as the solver produced it, before being pinned to zero.
    pub raw_t_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallDiagnostics {
    pub wall_id: String,
    pub neighbor_points: usize,
    pub subspace_points: usize,
    pub segment_points: usize,
    /// Cut-off range `[z_min, z_max]` of the plinth band.
    pub cutoff: Option<[f64; 2]>,
    pub rms_residual: Option<f64>,
    /// Set when the wall was dropped from the adjustment.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub err_h: f64,
    pub std_h: f64,
    pub err_v: f64,
    pub std_v: f64,
    pub n_h: usize,
    pub n_v: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub strategy: String,
    pub local_origin: [f64; 3],
    /// Scalar-first unit quaternion of the cloud-to-model rotation.
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
    pub matrix: [[f64; 4]; 4],
    pub t_z_stage: TzStage,
    pub solver: SolverSummary,
    pub per_wall: Vec<WallDiagnostics>,
    pub metrics: Option<MetricsSummary>,
}

impl Report {
    pub fn new(
        strategy: impl Into<String>,
        local_origin: Vec3,
        transform: &RigidTransform,
        t_z_stage: TzStage,
        solver: SolverSummary,
        per_wall: Vec<WallDiagnostics>,
        metrics: Option<MetricsSummary>,
    ) -> Self {
        let t = transform.translation;
        Self {
            version: REPORT_VERSION,
            strategy: strategy.into(),
            local_origin: [local_origin.x, local_origin.y, local_origin.z],
            quaternion: transform.rotation.to_array(),
            translation: [t.x, t.y, t.z],
            matrix: transform.matrix_rows(),
            t_z_stage,
            solver,
            per_wall,
            metrics,
        }
    }

    pub fn transform(&self) -> RigidTransform {
        RigidTransform::new(
            crate::geom::Quaternion::from_array(self.quaternion),
            Vec3::from(self.translation),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub fn write_report(path: &Path, report: &Report) -> Result<(), IoError> {
    fs::write(path, report.to_json()).map_err(|e| IoError::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Report, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
