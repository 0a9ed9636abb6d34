//! Readers and writers for point clouds, wall models, DTM grids and the
//! registration report.

mod cloud;
mod dtm;
mod report;
mod walls;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use cloud::{read_point_cloud, write_point_cloud_ascii, write_point_cloud_ply, PointCloud};
pub use dtm::{read_dtm, write_dtm, DtmGrid};
pub use report::{
    read_report, write_report, MetricsSummary, Report, SolverSummary, TzStage, WallDiagnostics,
    REPORT_VERSION,
};
pub use walls::{read_wall_model, wall_model_from_json, write_wall_model, WallModel, WallSurface};

/// Maximum vertex-to-plane distance accepted for a wall polygon, meters.
pub const PLANARITY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("point cloud contains no points")]
    EmptyCloud,
    #[error("wall {0} is not planar within tolerance")]
    NonPlanarPolygon(String),
    #[error("duplicate wall id {0}")]
    DuplicateId(String),
    #[error("inconsistent grid dimensions: {0}")]
    InconsistentDimensions(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        IoError::Parse {
            line,
            msg: msg.into(),
        }
    }
}
