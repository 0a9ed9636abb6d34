//! Synthetic single-building scenes: a rectangular footprint whose walls
//! carry a plinth band on the footprint and an upper facade set back by a
//! horizontal offset, surrounded by ground, with a known misregistration.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Point3, Quaternion, RigidTransform, Vec3};
use crate::io::{
    write_dtm, write_point_cloud_ascii, write_point_cloud_ply, write_wall_model, DtmGrid, IoError,
    PointCloud, WallModel, WallSurface,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub rotation_axis: [f64; 3],
    pub rotation_deg: f64,
    pub translation: [f64; 3],
}

impl TruthSpec {
    pub fn transform(&self) -> RigidTransform {
        RigidTransform::new(
            Quaternion::from_axis_angle(&Vec3::from(self.rotation_axis), self.rotation_deg.to_radians()),
            Vec3::from(self.translation),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Footprint extent along x, meters.
    pub width: f64,
    /// Footprint extent along y, meters.
    pub length: f64,
    pub height: f64,
    pub plinth_height: f64,
    /// Outward offset of the upper facade from the footprint, meters.
    pub facade_offset: f64,
    pub noise_sigma: f64,
    /// Drop probability on the first half of every wall.
    pub occlusion_fraction: f64,
    /// Wall points per square meter.
    pub density: f64,
    /// Width of the ground ring around the footprint, meters.
    pub ground_extent: f64,
    /// Ground points per square meter.
    pub ground_density: f64,
    /// Ground is `z = slope[0]·x + slope[1]·y`.
    pub ground_slope: [f64; 2],
    /// Indices (0 = south, 1 = east, 2 = north, 3 = west) of scanned walls.
    pub visible_walls: Vec<usize>,
    pub clutter_points: usize,
    pub dtm_cell: f64,
    /// Added to every exported coordinate.
    pub origin: [f64; 3],
    /// Cloud-to-model transform the registration should recover.
    pub truth: TruthSpec,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 16.0,
            length: 10.0,
            height: 6.0,
            plinth_height: 0.5,
            facade_offset: 0.1,
            noise_sigma: 0.005,
            occlusion_fraction: 0.0,
            density: 400.0,
            ground_extent: 4.0,
            ground_density: 20.0,
            ground_slope: [0.0, 0.0],
            visible_walls: vec![0, 1, 2, 3],
            clutter_points: 0,
            dtm_cell: 1.0,
            origin: [0.0, 0.0, 0.0],
            truth: TruthSpec {
                rotation_axis: [0.0, 0.0, 1.0],
                rotation_deg: 1.0,
                translation: [0.10, -0.05, 0.20],
            },
            seed: 42,
        }
    }
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let spec: SceneSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.into()));
        if !(self.width > 0.0 && self.length > 0.0 && self.height > 0.0) {
            return bad("footprint and height must be positive");
        }
        if !(self.plinth_height > 0.0 && self.plinth_height < self.height) {
            return bad("plinth height must lie in (0, height)");
        }
        if !(0.0..=0.5).contains(&self.facade_offset) {
            return bad("facade offset must lie in [0, 0.5]");
        }
        if !(self.density > 0.0) || self.ground_density < 0.0 || self.noise_sigma < 0.0 {
            return bad("densities must be positive and noise non-negative");
        }
        if !(0.0..1.0).contains(&self.occlusion_fraction) {
            return bad("occlusion fraction must lie in [0, 1)");
        }
        if !(self.dtm_cell > 0.0) || self.ground_extent < 0.0 {
            return bad("dtm cell must be positive");
        }
        if self.visible_walls.iter().any(|&w| w > 3) {
            return bad("visible walls are indexed 0..=3");
        }
        Ok(())
    }

    pub fn ground_z(&self, x: f64, y: f64) -> f64 {
        self.ground_slope[0] * x + self.ground_slope[1] * y
    }

    fn corners(&self) -> [(f64, f64); 4] {
        let (hx, hy) = (0.5 * self.width, 0.5 * self.length);
        [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Plinth,
    Facade,
    Ground,
    Clutter,
}

#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    /// Local coordinates, misregistered by `truth⁻¹`, noisy.
    pub cloud: PointCloud,
    pub walls: WallModel,
    pub dtm: DtmGrid,
    pub labels: Vec<Label>,
    /// Wall each plinth/facade/clutter point was generated for.
    pub source_wall: Vec<Option<usize>>,
    /// Noise-free model-frame position of every point.
    pub model_points: Vec<Point3<f64>>,
    pub truth: RigidTransform,
}

impl SceneBundle {
    pub fn label_count(&self, l: Label) -> usize {
        self.labels.iter().filter(|&&x| x == l).count()
    }
}

pub fn generate(spec: &SceneSpec) -> Result<SceneBundle, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let truth = spec.truth.transform();
    let corners = spec.corners();

    let mut walls = Vec::with_capacity(4);
    for i in 0..4 {
        let (a, b) = (corners[i], corners[(i + 1) % 4]);
        let base = spec.ground_z(a.0, a.1).min(spec.ground_z(b.0, b.1));
        let v = vec![
            Point3::new(a.0, a.1, base),
            Point3::new(b.0, b.1, base),
            Point3::new(b.0, b.1, spec.height),
            Point3::new(a.0, a.1, spec.height),
        ];
        walls.push(WallSurface::new(format!("wall_{i}"), v)?);
    }

    let mut model_points = Vec::new();
    let mut labels = Vec::new();
    let mut source = Vec::new();
    for &wi in &spec.visible_walls {
        let (a, b) = (corners[wi], corners[(wi + 1) % 4]);
        let dir = Vec3::new(b.0 - a.0, b.1 - a.1, 0.0);
        let len = dir.norm();
        let dir = dir / len;
        let outward = Vec3::new(dir.y, -dir.x, 0.0);
        let base = walls[wi].vertices[0].z;
        let n = (spec.density * len * (spec.height - base)).round() as usize;
        for _ in 0..n {
            let u = rng.random_range(0.0..len);
            let z = rng.random_range(base..spec.height);
            let drop: f64 = rng.random();
            let foot = Vec3::new(a.0, a.1, 0.0) + dir * u;
            let g = spec.ground_z(foot.x, foot.y);
            if z < g || (u < 0.5 * len && drop < spec.occlusion_fraction) {
                continue;
            }
            let (label, off) = if z <= g + spec.plinth_height {
                (Label::Plinth, 0.0)
            } else {
                (Label::Facade, spec.facade_offset)
            };
            model_points.push(Point3::from(foot + outward * off + Vec3::z() * z));
            labels.push(label);
            source.push(Some(wi));
        }
    }

    let (hx, hy) = (0.5 * spec.width, 0.5 * spec.length);
    let e = spec.ground_extent;
    let outer = (2.0 * (hx + e)) * (2.0 * (hy + e));
    let n_ground = (spec.ground_density * outer).round() as usize;
    for _ in 0..n_ground {
        let x = rng.random_range(-hx - e..hx + e);
        let y = rng.random_range(-hy - e..hy + e);
        if x.abs() < hx && y.abs() < hy {
            continue;
        }
        model_points.push(Point3::new(x, y, spec.ground_z(x, y)));
        labels.push(Label::Ground);
        source.push(None);
    }

    if spec.clutter_points > 0 && !spec.visible_walls.is_empty() {
        let blobs = 2 * spec.visible_walls.len();
        for k in 0..spec.clutter_points {
            let blob = k % blobs;
            let wi = spec.visible_walls[blob % spec.visible_walls.len()];
            let (a, b) = (corners[wi], corners[(wi + 1) % 4]);
            let dir = Vec3::new(b.0 - a.0, b.1 - a.1, 0.0);
            let len = dir.norm();
            let dir = dir / len;
            let outward = Vec3::new(dir.y, -dir.x, 0.0);
            let centre = len * (0.25 + 0.5 * (blob / spec.visible_walls.len()) as f64);
            let u = centre + rng.random_range(-0.6..0.6);
            let off = spec.facade_offset + rng.random_range(0.15..0.65);
            let foot = Vec3::new(a.0, a.1, 0.0) + dir * u + outward * off;
            let z = spec.ground_z(foot.x, foot.y) + rng.random_range(0.0..1.5);
            model_points.push(Point3::new(foot.x, foot.y, z));
            labels.push(Label::Clutter);
            source.push(Some(wi));
        }
    }

    let inv = truth.inverse();
    let points: Vec<Point3<f64>> = model_points
        .iter()
        .map(|p| {
            let mut q = inv.apply(p);
            if spec.noise_sigma > 0.0 {
                q += Vec3::new(
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                );
            }
            q
        })
        .collect();

    let cs = spec.dtm_cell;
    let ox = ((-hx - e - 1.0) / cs).floor() * cs;
    let oy = ((-hy - e - 1.0) / cs).floor() * cs;
    let n_cols = ((hx + e + 1.0 - ox) / cs).ceil() as usize;
    let n_rows = ((hy + e + 1.0 - oy) / cs).ceil() as usize;
    let dtm = DtmGrid::from_fn(ox, oy, cs, n_cols, n_rows, |x, y| spec.ground_z(x, y));

    Ok(SceneBundle {
        spec: spec.clone(),
        cloud: PointCloud::from_points(points),
        walls: WallModel {
            local_origin: Vec3::from(spec.origin),
            walls,
        },
        dtm,
        labels,
        source_wall: source,
        model_points,
        truth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for TruthFile {
    fn from(t: &RigidTransform) -> Self {
        Self {
            quaternion: t.rotation.canonical().to_array(),
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TruthFile {
    pub fn transform(&self) -> RigidTransform {
        RigidTransform::new(
            Quaternion::from_array(self.quaternion),
            Vec3::from(self.translation),
        )
    }
}

pub fn read_truth(path: &Path) -> Result<RigidTransform, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let t: TruthFile = serde_json::from_str(&text)?;
    Ok(t.transform())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Ascii,
    Ply,
}

/// Writes `cloud.xyz` (or `cloud.ply`), `walls.json`, `dtm.asc` and
/// `truth.json` in global coordinates.
pub fn write_bundle(bundle: &SceneBundle, dir: &Path, format: CloudFormat) -> Result<(), SynthError> {
    let io = |e| IoError::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    fs::create_dir_all(dir).map_err(io)?;
    let origin = bundle.walls.local_origin;
    let mut cloud = bundle.cloud.clone();
    cloud.shift(&-origin);
    match format {
        CloudFormat::Ascii => write_point_cloud_ascii(&dir.join("cloud.xyz"), &cloud)?,
        CloudFormat::Ply => write_point_cloud_ply(&dir.join("cloud.ply"), &cloud)?,
    }
    write_wall_model(&dir.join("walls.json"), &bundle.walls)?;
    let mut dtm = bundle.dtm.clone();
    dtm.shift(&-origin);
    write_dtm(&dir.join("dtm.asc"), &dtm)?;
    let truth = serde_json::to_string_pretty(&TruthFile::from(&bundle.truth)).map_err(IoError::from)? + "\n";
    fs::write(dir.join("truth.json"), truth).map_err(io)?;
    Ok(())
}

/// (rotation error in degrees, horizontal and vertical translation error in meters).
pub fn oracle_metrics(truth: &RigidTransform, estimated: &RigidTransform) -> (f64, f64, f64) {
    let rot = estimated
        .rotation
        .mul(&truth.rotation.conjugate())
        .angle_degrees();
    let d = estimated.translation - truth.translation;
    (rot, d.xy().norm(), d.z.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::fit_plane;
    use approx::assert_abs_diff_eq;

    fn exact(spec: SceneSpec) -> SceneSpec {
        SceneSpec {
            noise_sigma: 0.0,
            truth: TruthSpec {
                rotation_axis: [0.0, 0.0, 1.0],
                rotation_deg: 0.0,
                translation: [0.0; 3],
            },
            ..spec
        }
    }

    fn wall_distance(b: &SceneBundle, i: usize) -> f64 {
        let w = &b.walls.walls[b.source_wall[i].unwrap()];
        w.plane.distance(&b.truth.apply(&b.cloud.points[i]))
    }

    #[test]
    fn zero_offset_points_on_walls() {
        let b = generate(&exact(SceneSpec {
            facade_offset: 0.0,
            ..Default::default()
        }))
        .unwrap();
        for (i, l) in b.labels.iter().enumerate() {
            if matches!(l, Label::Plinth | Label::Facade) {
                assert!(wall_distance(&b, i) < 1e-9);
            }
        }
    }

    #[test]
    fn facade_sits_at_the_offset() {
        let b = generate(&exact(SceneSpec {
            facade_offset: 0.10,
            ..Default::default()
        }))
        .unwrap();
        for (i, l) in b.labels.iter().enumerate() {
            match l {
                Label::Plinth => assert!(wall_distance(&b, i) < 1e-9),
                Label::Facade => assert_abs_diff_eq!(wall_distance(&b, i), 0.10, epsilon = 1e-9),
                _ => {}
            }
        }
    }

    #[test]
    fn occlusion_matches_binomial_mean() {
        let spec = SceneSpec {
            occlusion_fraction: 0.5,
            ground_density: 0.0,
            ..Default::default()
        };
        let b = generate(&spec).unwrap();
        let w = &b.walls.walls[0];
        let len = spec.width;
        let n_half = spec.density * len * spec.height * 0.5;
        let a = w.vertices[0];
        let kept_half = (0..b.cloud.len())
            .filter(|&i| b.source_wall[i] == Some(0))
            .filter(|&i| (b.model_points[i].x - a.x).abs() < 0.5 * len)
            .count() as f64;
        let expect = n_half * 0.5;
        assert!(
            (kept_half - expect).abs() < 0.02 * expect,
            "{kept_half} vs {expect}"
        );
    }

    #[test]
    fn truth_restores_plinth_within_noise() {
        let spec = SceneSpec::default();
        let b = generate(&spec).unwrap();
        for (i, l) in b.labels.iter().enumerate() {
            if *l == Label::Plinth {
                assert!(wall_distance(&b, i) < 3.0 * spec.noise_sigma * 3f64.sqrt());
            }
        }
    }

    #[test]
    fn whole_wall_fit_is_biased_toward_the_facade() {
        let spec = exact(SceneSpec {
            facade_offset: 0.1,
            ..Default::default()
        });
        let b = generate(&spec).unwrap();
        let pts: Vec<_> = (0..b.cloud.len())
            .filter(|&i| b.source_wall[i] == Some(1) && b.labels[i] != Label::Ground)
            .map(|i| b.model_points[i])
            .collect();
        let fit = fit_plane(&pts).unwrap();
        // The fitted plane tilts across the step, so its offset is read at
        // the centroid of the sampled wall, i.e. the area-weighted mean.
        let c = pts.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / pts.len() as f64;
        let on_fit = fit.project(&Point3::from(c));
        let offset_shift = b.walls.walls[1].plane.distance(&on_fit);
        let hf = spec.height - spec.plinth_height;
        let expect = hf / spec.height * spec.facade_offset;
        assert!(
            (offset_shift - expect).abs() < 0.005,
            "{offset_shift} vs {expect}"
        );
    }

    #[test]
    fn deterministic_and_validated() {
        let a = generate(&SceneSpec::default()).unwrap();
        let b = generate(&SceneSpec::default()).unwrap();
        assert_eq!(a.cloud, b.cloud);
        assert!(generate(&SceneSpec {
            facade_offset: 0.6,
            ..Default::default()
        })
        .is_err());
        assert!(generate(&SceneSpec {
            plinth_height: 7.0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn toml_spec() {
        let s = SceneSpec::from_toml("facade_offset = 0.2\nseed = 9\n[truth]\nrotation_axis = [0,0,1]\nrotation_deg = 2.0\ntranslation = [0,0,0]\n").unwrap();
        assert_eq!(s.facade_offset, 0.2);
        assert_eq!(s.seed, 9);
        assert!(SceneSpec::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn oracle_errors() {
        let t = SceneSpec::default().truth.transform();
        assert_eq!(oracle_metrics(&t, &t), (0.0, 0.0, 0.0));
        let extra = RigidTransform::new(
            Quaternion::from_axis_angle(&Vec3::z(), 1f64.to_radians()),
            Vec3::zeros(),
        );
        let (r, _, _) = oracle_metrics(&t, &extra.compose(&t));
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn oracle_matches_matrix_log() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mk = |rng: &mut ChaCha8Rng| {
                RigidTransform::new(
                    Quaternion::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ),
                    Vec3::new(rng.random(), rng.random(), rng.random()),
                )
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let m = b.rotation.to_matrix() * a.rotation.to_matrix().transpose();
            // Axis-angle from the rotation matrix: θ = acos((tr − 1)/2),
            // refined with the skew part for accuracy near 0 and π.
            let s = Vec3::new(
                m[(2, 1)] - m[(1, 2)],
                m[(0, 2)] - m[(2, 0)],
                m[(1, 0)] - m[(0, 1)],
            )
            .norm()
                / 2.0;
            let c = (m.trace() - 1.0) / 2.0;
            let theta = s.atan2(c).to_degrees();
            let (r, h, v) = oracle_metrics(&a, &b);
            assert_abs_diff_eq!(r, theta, epsilon = 1e-9);
            let d = b.translation - a.translation;
            assert_abs_diff_eq!(h, (d.x * d.x + d.y * d.y).sqrt(), epsilon = 1e-15);
            assert_abs_diff_eq!(v, d.z.abs(), epsilon = 1e-15);
        }
    }

    #[test]
    fn bundle_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec {
            density: 50.0,
            origin: [691000.0, 5335000.0, 500.0],
            ..Default::default()
        };
        let b = generate(&spec).unwrap();
        write_bundle(&b, dir.path(), CloudFormat::Ascii).unwrap();
        let mut names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, ["cloud.xyz", "dtm.asc", "truth.json", "walls.json"]);
        let walls = crate::io::read_wall_model(&dir.path().join("walls.json")).unwrap();
        assert_eq!(walls.local_origin, Vec3::from(spec.origin));
        assert_abs_diff_eq!(
            walls.walls[0].vertices[0],
            b.walls.walls[0].vertices[0],
            epsilon = 1e-9
        );
        let mut cloud = crate::io::read_point_cloud(&dir.path().join("cloud.xyz")).unwrap();
        cloud.shift(&walls.local_origin);
        assert_eq!(cloud.len(), b.cloud.len());
        assert!((cloud.points[5] - b.cloud.points[5]).norm() < 2e-6);
        let t = read_truth(&dir.path().join("truth.json")).unwrap();
        assert_abs_diff_eq!(t.translation, b.truth.translation, epsilon = 1e-15);
    }
}
