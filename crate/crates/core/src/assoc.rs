//! Buffer-zone association of cloud points with model walls, plus
//! terrain-band ground filtering.

use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{verticality_angle, PlaneParams, Point3, Vec3};
use crate::ground::GroundModel;
use crate::io::{PointCloud, WallSurface};

/// Vertical margin added above and below each wall polygon, meters.
pub const BUFFER_Z_MARGIN: f64 = 0.2;
/// Walls flatter than this (degrees) are not buffered.
pub const MIN_WALL_VERTICALITY: f64 = 45.0;

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssocError {
    #[error("buffer thickness must be positive, got {0}")]
    InvalidThickness(f64),
    #[error("ground band must be positive, got {0}")]
    InvalidBand(f64),
    #[error("no wall is steep enough to buffer")]
    NoVerticalWalls,
    #[error("no point lies over a covered part of the ground model")]
    NoCoverage,
}

/// A wall polygon swept horizontally along its normal.
#[derive(Debug, Clone)]
pub struct WallBuffer {
    pub wall_index: usize,
    pub wall_id: String,
    pub plane: PlaneParams,
    /// Unit horizontal projection of the wall normal (sweep direction).
    pub sweep: Vec3,
    /// Unit horizontal along-wall direction.
    pub along: Vec3,
    pub u_range: (f64, f64),
    pub z_range: (f64, f64),
    pub half_thickness: f64,
    n_dot_sweep: f64,
}

impl WallBuffer {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        if p.z < self.z_range.0 || p.z > self.z_range.1 {
            return false;
        }
        let u = self.along.dot(&p.coords);
        if u < self.u_range.0 || u > self.u_range.1 {
            return false;
        }
        // Horizontal distance from p to the wall plane along the sweep.
        let s = self.plane.signed_distance(p) / self.n_dot_sweep;
        s.abs() <= self.half_thickness
    }
}

pub fn build_wall_buffers(walls: &[WallSurface], thickness: f64) -> Result<Vec<WallBuffer>, AssocError> {
    if !(thickness > 0.0) {
        return Err(AssocError::InvalidThickness(thickness));
    }
    let mut out = Vec::new();
    for (i, w) in walls.iter().enumerate() {
        if verticality_angle(&w.plane) < MIN_WALL_VERTICALITY {
            continue;
        }
        let n = w.plane.normal;
        let sweep = Vec3::new(n.x, n.y, 0.0).normalize();
        let along = Vec3::new(-sweep.y, sweep.x, 0.0);
        let (mut u0, mut u1, mut z0, mut z1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for v in &w.vertices {
            let u = along.dot(&v.coords);
            u0 = u0.min(u);
            u1 = u1.max(u);
            z0 = z0.min(v.z);
            z1 = z1.max(v.z);
        }
        out.push(WallBuffer {
            wall_index: i,
            wall_id: w.id.clone(),
            plane: w.plane,
            sweep,
            along,
            u_range: (u0, u1),
            z_range: (z0 - BUFFER_Z_MARGIN, z1 + BUFFER_Z_MARGIN),
            half_thickness: 0.5 * thickness,
            n_dot_sweep: n.dot(&sweep),
        });
    }
    if out.is_empty() {
        return Err(AssocError::NoVerticalWalls);
    }
    Ok(out)
}

/// Buffer owning `p`, if any: perpendicular-nearest plane first, then the
/// lexicographically smallest wall id.
pub fn assign_point(p: &Point3<f64>, buffers: &[WallBuffer]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (b, buf) in buffers.iter().enumerate() {
        if !buf.contains(p) {
            continue;
        }
        let d = buf.plane.distance(p);
        best = match best {
            None => Some((b, d)),
            Some((bb, bd)) => {
                if d < bd - TIE_EPS || ((d - bd).abs() <= TIE_EPS && buf.wall_id < buffers[bb].wall_id) {
                    Some((b, d))
                } else {
                    Some((bb, bd))
                }
            }
        };
    }
    best.map(|(b, _)| b)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssociationResult {
    /// One entry per buffered wall, in buffer order: (wall id, N_i).
    pub per_wall: Vec<(String, Vec<usize>)>,
    pub ground_indices: Vec<usize>,
    pub discarded_indices: Vec<usize>,
}

impl AssociationResult {
    pub fn neighbors(&self, wall_id: &str) -> Option<&[usize]> {
        self.per_wall
            .iter()
            .find(|(id, _)| id == wall_id)
            .map(|(_, v)| v.as_slice())
    }

    pub fn unmatched_walls(&self) -> impl Iterator<Item = &str> {
        self.per_wall
            .iter()
            .filter(|(_, v)| v.is_empty())
            .map(|(id, _)| id.as_str())
    }
}

/// Assigns every point to at most one wall; unassigned points are returned
/// in `discarded_indices` (ground filtering is a separate step).
pub fn associate_points(cloud: &PointCloud, buffers: &[WallBuffer]) -> AssociationResult {
    let owner: Vec<Option<usize>> = cloud
        .points
        .par_iter()
        .map(|p| assign_point(p, buffers))
        .collect();
    let mut per_wall: Vec<(String, Vec<usize>)> =
        buffers.iter().map(|b| (b.wall_id.clone(), Vec::new())).collect();
    let mut rest = Vec::new();
    for (i, o) in owner.into_iter().enumerate() {
        match o {
            Some(b) => per_wall[b].1.push(i),
            None => rest.push(i),
        }
    }
    AssociationResult {
        per_wall,
        ground_indices: Vec::new(),
        discarded_indices: rest,
    }
}

/// Indices of points within `band` (vertically) of the ground surface.
pub fn filter_ground(
    cloud: &PointCloud,
    ground: &dyn GroundModel,
    band: f64,
) -> Result<Vec<usize>, AssocError> {
    if !(band > 0.0) {
        return Err(AssocError::InvalidBand(band));
    }
    let flags: Vec<Option<bool>> = cloud
        .points
        .par_iter()
        .map(|p| ground.height_at(p.x, p.y).map(|z| (p.z - z).abs() <= band))
        .collect();
    if flags.iter().all(Option::is_none) {
        return Err(AssocError::NoCoverage);
    }
    Ok(flags
        .into_iter()
        .enumerate()
        .filter_map(|(i, f)| (f == Some(true)).then_some(i))
        .collect())
}

/// Wall association followed by ground filtering of the leftovers.
pub fn associate(
    cloud: &PointCloud,
    buffers: &[WallBuffer],
    ground: Option<(&dyn GroundModel, f64)>,
) -> Result<AssociationResult, AssocError> {
    let mut res = associate_points(cloud, buffers);
    if let Some((model, band)) = ground {
        let ground_all = filter_ground(cloud, model, band)?;
        // Both lists are ascending; keep ground points no wall claimed.
        let mut is_ground = vec![false; cloud.len()];
        for &i in &ground_all {
            is_ground[i] = true;
        }
        let (g, d): (Vec<usize>, Vec<usize>) = res.discarded_indices.iter().partition(|&&i| is_ground[i]);
        res.ground_indices = g;
        res.discarded_indices = d;
    }
    Ok(res)
}
