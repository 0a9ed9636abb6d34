use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IoError, PLANARITY_TOLERANCE};
use crate::geom::{fit_plane, point_plane_distance, PlaneParams, Point3, Vec3};

/// One planar wall polygon of the building model, in local coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct WallSurface {
    pub id: String,
    pub vertices: Vec<Point3<f64>>,
    pub plane: PlaneParams,
}

impl WallSurface {
    /// Validates the polygon and derives its plane.
    pub fn new(id: impl Into<String>, vertices: Vec<Point3<f64>>) -> Result<Self, IoError> {
        let id = id.into();
        if vertices.len() < 3 {
            return Err(IoError::NonPlanarPolygon(id));
        }
        let plane = fit_plane(&vertices).map_err(|_| IoError::NonPlanarPolygon(id.clone()))?;
        if vertices
            .iter()
            .any(|v| point_plane_distance(v, &plane) > PLANARITY_TOLERANCE)
        {
            return Err(IoError::NonPlanarPolygon(id));
        }
        Ok(Self { id, vertices, plane })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WallModel {
    /// Subtracted from all input coordinates on ingestion.
    pub local_origin: Vec3,
    pub walls: Vec<WallSurface>,
}

impl WallModel {
    pub fn wall(&self, id: &str) -> Option<&WallSurface> {
        self.walls.iter().find(|w| w.id == id)
    }
}

#[derive(Serialize, Deserialize)]
struct WallModelFile {
    #[serde(default)]
    local_origin: [f64; 3],
    walls: Vec<WallEntry>,
}

#[derive(Serialize, Deserialize)]
struct WallEntry {
    id: String,
    vertices: Vec<[f64; 3]>,
}

pub fn read_wall_model(path: &Path) -> Result<WallModel, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    wall_model_from_json(&text)
}

pub fn wall_model_from_json(text: &str) -> Result<WallModel, IoError> {
    let file: WallModelFile = serde_json::from_str(text).map_err(|e| IoError::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    let origin = Vec3::from(file.local_origin);
    let mut seen = HashSet::new();
    let mut walls = Vec::with_capacity(file.walls.len());
    for entry in file.walls {
        if !seen.insert(entry.id.clone()) {
            return Err(IoError::DuplicateId(entry.id));
        }
        let vertices = entry
            .vertices
            .iter()
            .map(|v| Point3::from(Vec3::from(*v) - origin))
            .collect();
        walls.push(WallSurface::new(entry.id, vertices)?);
    }
    Ok(WallModel {
        local_origin: origin,
        walls,
    })
}

/// Writes the model back in global coordinates.
pub fn write_wall_model(path: &Path, model: &WallModel) -> Result<(), IoError> {
    let o = model.local_origin;
    let file = WallModelFile {
        local_origin: [o.x, o.y, o.z],
        walls: model
            .walls
            .iter()
            .map(|w| WallEntry {
                id: w.id.clone(),
                vertices: w
                    .vertices
                    .iter()
                    .map(|v| [v.x + o.x, v.y + o.y, v.z + o.z])
                    .collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    fs::write(path, text).map_err(|e| IoError::io(path, e))
}
