//! Interchangeable ways of turning a wall's neighbourhood into the points
//! that enter the adjustment, and interchangeable ground references, both
//! selected by name at runtime.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::extract::{extract_wall_segment, ExtractError, ExtractParams};
use crate::geom::{PlaneParams, Point3, Vec3};
use crate::ground::{GroundModel, SurfaceGround};
use crate::io::{read_dtm, read_wall_model, IoError, WallSurface};
use crate::plinth::{localize_representative_subspace, CutoffRange, LocalizeParams, PlinthError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error(transparent)]
    Plinth(#[from] PlinthError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
}

/// Result of establishing one wall's correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct WallCorrespondence {
    /// Indices into the neighbourhood handed to the strategy, ascending.
    pub indices: Vec<usize>,
    /// Plane fitted to the selected points.
    pub plane: PlaneParams,
    pub cutoff: Option<CutoffRange>,
    /// Points left after band localization (the whole neighbourhood if none).
    pub subspace: Vec<usize>,
}

pub trait CorrespondenceStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn establish(
        &self,
        wall: &WallSurface,
        neighbors: &[Point3<f64>],
        params: &ExtractParams,
        seed: u64,
    ) -> Result<WallCorrespondence, StrategyError>;
}

/// Cut-off height estimation followed by segment extraction in the plinth band.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlinthStrategy;

impl CorrespondenceStrategy for PlinthStrategy {
    fn name(&self) -> &'static str {
        "plinth"
    }

    fn establish(
        &self,
        wall: &WallSurface,
        neighbors: &[Point3<f64>],
        params: &ExtractParams,
        seed: u64,
    ) -> Result<WallCorrespondence, StrategyError> {
        let lp = LocalizeParams::for_neighbourhood(params.t_dis, params.t_alpha, neighbors.len());
        let sub =
            localize_representative_subspace(neighbors, &lp, crate::seed::derive_seed(seed, "localize"))?;
        let band: Vec<Point3<f64>> = sub.indices.iter().map(|&i| neighbors[i]).collect();
        let seg = extract_wall_segment(&band, wall, params, crate::seed::derive_seed(seed, "extract"))?;
        Ok(WallCorrespondence {
            indices: seg.indices.iter().map(|&k| sub.indices[k]).collect(),
            plane: seg.plane,
            cutoff: Some(sub.range),
            subspace: sub.indices,
        })
    }
}

/// Segment extraction over the entire neighbourhood, ignoring where the
/// plinth is. Facade points dominate, so the result inherits the facade offset.
#[derive(Debug, Clone, Copy, Default)]
pub struct WholeWallStrategy;

impl CorrespondenceStrategy for WholeWallStrategy {
    fn name(&self) -> &'static str {
        "whole-wall"
    }

    fn establish(
        &self,
        wall: &WallSurface,
        neighbors: &[Point3<f64>],
        params: &ExtractParams,
        seed: u64,
    ) -> Result<WallCorrespondence, StrategyError> {
        let seg = extract_wall_segment(neighbors, wall, params, crate::seed::derive_seed(seed, "extract"))?;
        Ok(WallCorrespondence {
            indices: seg.indices,
            plane: seg.plane,
            cutoff: None,
            subspace: (0..neighbors.len()).collect(),
        })
    }
}

pub const DEFAULT_STRATEGY: &str = "plinth";

#[derive(Clone)]
pub struct Registry {
    strategies: BTreeMap<&'static str, Arc<dyn CorrespondenceStrategy>>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(PlinthStrategy));
        r.register(Arc::new(WholeWallStrategy));
        r
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            strategies: BTreeMap::new(),
        }
    }

    /// Replaces any strategy registered under the same name.
    pub fn register(&mut self, s: Arc<dyn CorrespondenceStrategy>) {
        self.strategies.insert(s.name(), s);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn CorrespondenceStrategy>> {
        self.strategies.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.strategies.keys().copied()
    }
}

pub const GROUND_KINDS: [&str; 2] = ["dtm", "surface"];

/// Sampling step for surface-model ground references, meters.
pub const SURFACE_SPACING: f64 = 1.0;

#[derive(Debug, Error)]
pub enum GroundLoadError {
    #[error("unknown ground kind `{0}` (expected one of: dtm, surface)")]
    UnknownKind(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Loads a ground reference of the named kind into the frame whose origin
/// is `local_origin`.
pub fn load_ground(
    kind: &str,
    path: &Path,
    local_origin: &Vec3,
) -> Result<Box<dyn GroundModel>, GroundLoadError> {
    match kind {
        "dtm" => {
            let mut dtm = read_dtm(path)?;
            dtm.shift(local_origin);
            Ok(Box::new(dtm))
        }
        "surface" => {
            let mut model = read_wall_model(path)?;
            let d = model.local_origin - local_origin;
            for s in &mut model.walls {
                let v = s.vertices.iter().map(|p| p + d).collect();
                *s = WallSurface::new(s.id.clone(), v)?;
            }
            model.local_origin = *local_origin;
            Ok(Box::new(SurfaceGround::new(&model, SURFACE_SPACING)))
        }
        other => Err(GroundLoadError::UnknownKind(other.to_string())),
    }
}
