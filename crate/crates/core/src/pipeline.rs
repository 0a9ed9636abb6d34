//! End-to-end registration: association, per-wall correspondences,
//! constrained adjustment, vertical alignment and evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc::{associate, build_wall_buffers, AssocError, AssociationResult};
use crate::extract::{ExtractParams, GrowthMode};
use crate::geom::{fit_plane, rotation_angle_between_normals, PlaneParams, Point3, RigidTransform, Vec3};
use crate::ghm::{solve, Correspondence, GhmError, SolveOptions, SolverReport, PARALLEL_TOLERANCE_DEG};
use crate::ground::GroundModel;
use crate::io::{
    read_point_cloud, read_wall_model, write_point_cloud_ascii, IoError, MetricsSummary, PointCloud, Report,
    SolverSummary, TzStage, WallDiagnostics, WallModel,
};
use crate::metrics::{compute_metrics_dropping_empty, generate_check_points, CylinderParams};
use crate::plinth::CutoffRange;
use crate::seed::derive_seed;
use crate::spatial::Index3;
use crate::strategy::{load_ground, CorrespondenceStrategy, GroundLoadError, Registry, DEFAULT_STRATEGY};
use crate::vertical::{denoise_ground, estimate_tz, VerticalError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cloud: Option<PathBuf>,
    pub walls: Option<PathBuf>,
    /// Ground reference file, interpreted according to `ground_kind`.
    pub dtm: Option<PathBuf>,
    pub ground_kind: String,
    pub output: Option<PathBuf>,
    pub dump_stages: Option<PathBuf>,
    pub strategy: String,
    /// Total buffer thickness, meters.
    pub thickness: f64,
    pub ground_band: f64,
    pub t_dis: f64,
    /// Degrees.
    pub t_alpha: f64,
    pub growth: GrowthMode,
    pub radius: f64,
    pub min_pairs: usize,
    pub denoise_k: usize,
    pub denoise_sigma: f64,
    pub seed: u64,
    /// Worker threads for the parallel stages; 0 uses every core.
    pub workers: usize,
    pub skip_vertical: bool,
    pub pseudo_plane: bool,
    pub max_iter: usize,
    pub tol: f64,
    pub metrics: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cloud: None,
            walls: None,
            dtm: None,
            ground_kind: "dtm".into(),
            output: None,
            dump_stages: None,
            strategy: DEFAULT_STRATEGY.into(),
            thickness: 1.0,
            ground_band: 0.3,
            t_dis: 0.02,
            t_alpha: 10.0,
            growth: GrowthMode::default(),
            radius: 0.5,
            min_pairs: 10,
            denoise_k: 8,
            denoise_sigma: 2.0,
            seed: 0,
            workers: 0,
            skip_vertical: false,
            pseudo_plane: true,
            max_iter: 50,
            tol: 1e-10,
            metrics: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("thickness", self.thickness),
            ("ground_band", self.ground_band),
            ("t_dis", self.t_dis),
            ("radius", self.radius),
            ("denoise_sigma", self.denoise_sigma),
            ("tol", self.tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PipelineError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.t_alpha > 0.0 && self.t_alpha < 90.0) {
            return Err(PipelineError::Config(format!(
                "t_alpha must lie in (0, 90), got {}",
                self.t_alpha
            )));
        }
        if self.max_iter == 0 || self.min_pairs == 0 || self.denoise_k < 3 {
            return Err(PipelineError::Config(
                "max_iter and min_pairs must be positive and denoise_k at least 3".into(),
            ));
        }
        Ok(())
    }

    pub fn extract_params(&self) -> ExtractParams {
        ExtractParams {
            growth: self.growth,
            ..ExtractParams::new(self.t_dis, self.t_alpha)
        }
    }

    fn needs_vertical(&self) -> bool {
        self.pseudo_plane && !self.skip_vertical
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Ground(#[from] GroundLoadError),
    #[error(transparent)]
    Assoc(#[from] AssocError),
    #[error("DegenerateGeometry: {0}")]
    Degenerate(String),
    #[error("RankDeficient: the normal equations are singular; keep the pseudo-plane or supply a ground reference")]
    RankDeficient,
    #[error("NoConvergence: the adjustment did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("vertical alignment: {0}")]
    Vertical(#[from] VerticalError),
}

impl PipelineError {
    /// Process exit code: 2 bad input, 3 degenerate geometry, 4 no convergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Io(_) | PipelineError::Ground(_) => 2,
            PipelineError::Assoc(AssocError::InvalidThickness(_) | AssocError::InvalidBand(_)) => 2,
            PipelineError::Assoc(AssocError::NoVerticalWalls) => 3,
            PipelineError::Degenerate(_) | PipelineError::RankDeficient => 3,
            PipelineError::NoConvergence(_) => 4,
            PipelineError::Assoc(AssocError::NoCoverage) | PipelineError::Vertical(_) => 1,
        }
    }
}

impl From<GhmError> for PipelineError {
    fn from(e: GhmError) -> Self {
        match e {
            GhmError::DegenerateGeometry(m) => PipelineError::Degenerate(m),
            GhmError::RankDeficient => PipelineError::RankDeficient,
            GhmError::NoConvergence { max_iter, .. } => PipelineError::NoConvergence(max_iter),
        }
    }
}

/// Everything in the local frame of the wall model.
pub struct Inputs {
    pub cloud: PointCloud,
    pub walls: WallModel,
    pub ground: Option<Box<dyn GroundModel>>,
}

impl Inputs {
    pub fn load(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let need = |p: &Option<PathBuf>, what: &str| {
            p.clone()
                .ok_or_else(|| PipelineError::Config(format!("missing {what} path")))
        };
        let walls = read_wall_model(&need(&cfg.walls, "wall model")?)?;
        let mut cloud = read_point_cloud(&need(&cfg.cloud, "point cloud")?)?;
        cloud.shift(&walls.local_origin);
        let ground = match &cfg.dtm {
            Some(p) => Some(load_ground(&cfg.ground_kind, p, &walls.local_origin)?),
            None => None,
        };
        Ok(Self { cloud, walls, ground })
    }
}

/// The points one wall contributes, as indices into the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct WallSelection {
    pub indices: Vec<usize>,
    pub subspace: Vec<usize>,
    pub plane: PlaneParams,
    pub cutoff: Option<CutoffRange>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WallOutcome {
    pub wall_id: String,
    pub neighbors: usize,
    pub selection: Result<WallSelection, String>,
}

/// Runs `f` on a pool of `workers` threads (0: rayon's default size).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(f)
}

/// Per-wall correspondence establishment, parallel over walls. Each wall's
/// random stream depends only on the global seed and the wall id.
pub fn establish_all(
    cloud: &PointCloud,
    walls: &WallModel,
    assoc: &AssociationResult,
    strategy: &dyn CorrespondenceStrategy,
    params: &ExtractParams,
    seed: u64,
) -> Vec<WallOutcome> {
    assoc
        .per_wall
        .par_iter()
        .map(|(id, nbrs)| {
            let wall = walls.wall(id).expect("buffers come from the model");
            let selection = if nbrs.is_empty() {
                Err("no points inside the wall buffer".to_string())
            } else {
                let pts: Vec<Point3<f64>> = nbrs.iter().map(|&i| cloud.points[i]).collect();
                strategy
                    .establish(wall, &pts, params, derive_seed(seed, id))
                    .map(|c| WallSelection {
                        indices: c.indices.iter().map(|&k| nbrs[k]).collect(),
                        subspace: c.subspace.iter().map(|&k| nbrs[k]).collect(),
                        plane: c.plane,
                        cutoff: c.cutoff,
                    })
                    .map_err(|e| e.to_string())
            };
            WallOutcome {
                wall_id: id.clone(),
                neighbors: nbrs.len(),
                selection,
            }
        })
        .collect()
}

pub struct PipelineOutput {
    pub report: Report,
    /// Rotation and horizontal translation only (or the coupled 6-DoF result).
    pub stage1: RigidTransform,
    pub transform: RigidTransform,
    pub association: AssociationResult,
    pub walls: Vec<WallOutcome>,
    pub solver: SolverReport,
    /// Denoised ground indices into the cloud.
    pub ground: Vec<usize>,
}

/// Association and per-wall correspondences only.
pub fn extract_planes(
    inputs: &Inputs,
    cfg: &PipelineConfig,
    registry: &Registry,
) -> Result<(AssociationResult, Vec<WallOutcome>), PipelineError> {
    cfg.validate()?;
    let strategy = lookup(registry, &cfg.strategy)?;
    with_workers(cfg.workers, || {
        let buffers = build_wall_buffers(&inputs.walls.walls, cfg.thickness)?;
        let ground = inputs.ground.as_deref().map(|g| (g, cfg.ground_band));
        let assoc = associate(&inputs.cloud, &buffers, ground)?;
        let mut walls = establish_all(
            &inputs.cloud,
            &inputs.walls,
            &assoc,
            strategy.as_ref(),
            &cfg.extract_params(),
            cfg.seed,
        );
        trim_corners(&inputs.cloud, &mut walls, cfg.t_dis);
        if let Some(dir) = &cfg.dump_stages {
            dump_walls(dir, inputs, &assoc, &walls)?;
        }
        Ok((assoc, walls))
    })
}

/// Drops segment points lying within `t_dis` of another, non-parallel
/// segment's plane. Near a corner the misregistered cloud can hand a few
/// points of the perpendicular wall to the wrong buffer, and those sit
/// close enough to pass the growth test.
pub fn trim_corners(cloud: &PointCloud, walls: &mut [WallOutcome], t_dis: f64) {
    let planes: Vec<Option<PlaneParams>> = walls
        .iter()
        .map(|w| w.selection.as_ref().ok().map(|s| s.plane))
        .collect();
    for (i, w) in walls.iter_mut().enumerate() {
        let Ok(sel) = &mut w.selection else { continue };
        let others: Vec<PlaneParams> = planes
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .filter_map(|(_, p)| *p)
            .filter(|p| rotation_angle_between_normals(&p.normal, &sel.plane.normal) > PARALLEL_TOLERANCE_DEG)
            .collect();
        let before = sel.indices.len();
        sel.indices
            .retain(|&k| others.iter().all(|p| p.distance(&cloud.points[k]) >= t_dis));
        if sel.indices.len() == before {
            continue;
        }
        let pts: Vec<Point3<f64>> = sel.indices.iter().map(|&k| cloud.points[k]).collect();
        match fit_plane(&pts) {
            Ok(p) if pts.len() >= 3 => sel.plane = p,
            _ => w.selection = Err("segment vanished after corner trimming".into()),
        }
    }
}

fn lookup(
    registry: &Registry,
    name: &str,
) -> Result<std::sync::Arc<dyn CorrespondenceStrategy>, PipelineError> {
    registry.get(name).ok_or_else(|| {
        let known: Vec<_> = registry.names().collect();
        PipelineError::Config(format!("unknown strategy `{name}` (known: {})", known.join(", ")))
    })
}

pub fn register(
    inputs: &Inputs,
    cfg: &PipelineConfig,
    registry: &Registry,
) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    if cfg.needs_vertical() && inputs.ground.is_none() {
        return Err(PipelineError::Config(
            "vertical alignment needs a ground reference (--dtm) or --skip-vertical".into(),
        ));
    }
    let (assoc, walls) = extract_planes(inputs, cfg, registry)?;
    with_workers(cfg.workers, || finish(inputs, cfg, assoc, walls))
}

fn finish(
    inputs: &Inputs,
    cfg: &PipelineConfig,
    assoc: AssociationResult,
    walls: Vec<WallOutcome>,
) -> Result<PipelineOutput, PipelineError> {
    let cloud = &inputs.cloud;
    let mut corrs: Vec<Correspondence> = walls
        .iter()
        .filter_map(|w| {
            let sel = w.selection.as_ref().ok()?;
            let model = inputs.walls.wall(&w.wall_id)?;
            let pts = sel.indices.iter().map(|&i| cloud.points[i]).collect();
            Some(Correspondence::wall(w.wall_id.clone(), model.plane, pts))
        })
        .collect();

    let ground_pts: Vec<Point3<f64>> = assoc.ground_indices.iter().map(|&i| cloud.points[i]).collect();
    let kept = denoise_ground(&ground_pts, cfg.denoise_k, cfg.denoise_sigma);
    let ground: Vec<usize> = kept.iter().map(|&k| assoc.ground_indices[k]).collect();
    if !cfg.pseudo_plane {
        if let Some(g) = inputs.ground.as_deref() {
            if let Ok(plane) = fit_plane(&g.reference_points()) {
                if !ground.is_empty() {
                    let pts = ground.iter().map(|&i| cloud.points[i]).collect();
                    corrs.push(Correspondence::ground("ground", plane, pts));
                }
            }
        }
    }

    let opts = SolveOptions {
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        pseudo_plane: cfg.pseudo_plane,
        estimate_tz: true,
        initial: RigidTransform::identity(),
    };
    let solver = solve(&corrs, &opts)?;
    let stage1 = solver.transform;

    let (transform, t_z_stage) = if !cfg.pseudo_plane {
        (
            stage1,
            TzStage::Coupled {
                t_z: stage1.translation.z,
            },
        )
    } else if cfg.skip_vertical {
        (stage1, TzStage::Skipped)
    } else {
        let g = inputs.ground.as_deref().expect("checked before the run");
        let moved: Vec<Point3<f64>> = ground.iter().map(|&i| stage1.apply(&cloud.points[i])).collect();
        let est = estimate_tz(&moved, g, cfg.radius, cfg.min_pairs)?;
        let mut t = stage1;
        t.translation.z = est.t_z;
        (
            t,
            TzStage::Estimated {
                t_z: est.t_z,
                n_pairs: est.n_pairs,
                source: g.kind().to_string(),
            },
        )
    };

    let metrics = if cfg.metrics {
        evaluate(inputs, &assoc, &transform)
    } else {
        None
    };

    let per_wall = walls
        .iter()
        .map(|w| {
            let rms = solver
                .rms
                .iter()
                .find(|(id, _)| *id == w.wall_id)
                .map(|(_, r)| *r);
            match &w.selection {
                Ok(s) => WallDiagnostics {
                    wall_id: w.wall_id.clone(),
                    neighbor_points: w.neighbors,
                    subspace_points: s.subspace.len(),
                    segment_points: s.indices.len(),
                    cutoff: s.cutoff.map(|r| [r.z_min, r.z_max]),
                    rms_residual: rms,
                    skipped: None,
                },
                Err(e) => WallDiagnostics {
                    wall_id: w.wall_id.clone(),
                    neighbor_points: w.neighbors,
                    subspace_points: 0,
                    segment_points: 0,
                    cutoff: None,
                    rms_residual: None,
                    skipped: Some(e.clone()),
                },
            }
        })
        .collect();

    let summary = SolverSummary {
        iterations: solver.iterations,
        converged: solver.converged,
        pseudo_plane: solver.pseudo_plane,
        variance_factor: solver.variance_factor,
        redundancy: solver.redundancy,
        raw_t_z: solver.raw_t_z,
    };
    let report = Report::new(
        cfg.strategy.clone(),
        inputs.walls.local_origin,
        &transform,
        t_z_stage,
        summary,
        per_wall,
        metrics,
    );

    if let Some(dir) = &cfg.dump_stages {
        let o = inputs.walls.local_origin;
        let pts: Vec<_> = ground.iter().map(|&i| cloud.points[i]).collect();
        write_points(&dir.join("ground_denoised.xyz"), &pts, &o)?;
        let t = crate::synth::TruthFile::from(&stage1);
        let text = serde_json::to_string_pretty(&t).map_err(IoError::from)? + "\n";
        fs::write(dir.join("stage1.json"), text).map_err(|e| IoError::Io {
            path: dir.join("stage1.json"),
            source: e,
        })?;
    }

    Ok(PipelineOutput {
        report,
        stage1,
        transform,
        association: assoc,
        walls,
        solver,
        ground,
    })
}

/// Check-point metrics on the registered wall and ground points; `None`
/// when too few check points can be evaluated.
fn evaluate(inputs: &Inputs, assoc: &AssociationResult, t: &RigidTransform) -> Option<MetricsSummary> {
    let mut idx: Vec<usize> = assoc
        .per_wall
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .collect();
    idx.extend(&assoc.ground_indices);
    let pts: Vec<Point3<f64>> = idx
        .par_iter()
        .map(|&i| t.apply(&inputs.cloud.points[i]))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let index = Index3::new(&pts);
    let check = generate_check_points(&inputs.walls.walls, inputs.ground.as_deref());
    compute_metrics_dropping_empty(&check, &pts, &index, &CylinderParams::default())
        .ok()
        .map(|m| m.summary())
}

fn write_points(path: &Path, pts: &[Point3<f64>], origin: &Vec3) -> Result<(), IoError> {
    let mut cloud = PointCloud::from_points(pts.to_vec());
    cloud.shift(&-origin);
    write_point_cloud_ascii(path, &cloud)
}

fn dump_walls(
    dir: &Path,
    inputs: &Inputs,
    assoc: &AssociationResult,
    walls: &[WallOutcome],
) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let o = inputs.walls.local_origin;
    let pick = |idx: &[usize]| -> Vec<Point3<f64>> { idx.iter().map(|&i| inputs.cloud.points[i]).collect() };
    let summary = serde_json::json!({
        "walls": assoc.per_wall.iter().map(|(id, v)| (id.clone(), v.len())).collect::<std::collections::BTreeMap<_, _>>(),
        "ground": assoc.ground_indices.len(),
        "discarded": assoc.discarded_indices.len(),
    });
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    fs::write(dir.join("association.json"), text).map_err(|e| IoError::Io {
        path: dir.join("association.json"),
        source: e,
    })?;
    for (id, v) in &assoc.per_wall {
        write_points(&dir.join(format!("neighbors_{id}.xyz")), &pick(v), &o)?;
    }
    for w in walls {
        if let Ok(s) = &w.selection {
            write_points(
                &dir.join(format!("subspace_{}.xyz", w.wall_id)),
                &pick(&s.subspace),
                &o,
            )?;
            write_points(
                &dir.join(format!("segment_{}.xyz", w.wall_id)),
                &pick(&s.indices),
                &o,
            )?;
        }
    }
    Ok(())
}

/// Inputs assembled in memory, e.g. from a generated scene.
pub fn inputs_from_bundle(bundle: &crate::synth::SceneBundle, with_ground: bool) -> Inputs {
    Inputs {
        cloud: bundle.cloud.clone(),
        walls: bundle.walls.clone(),
        ground: with_ground.then(|| Box::new(bundle.dtm.clone()) as Box<dyn GroundModel>),
    }
}
