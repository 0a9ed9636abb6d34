//! Interchangeable ground references: the raster DTM or planar surfaces
//! taken from a road/terrain model in the wall-model schema.

use crate::geom::{Point3, Vec3};
use crate::io::{DtmGrid, WallModel, WallSurface};

pub trait GroundModel: Send + Sync {
    fn kind(&self) -> &'static str;

    /// Terrain height at a planimetric location, `None` where uncovered.
    fn height_at(&self, x: f64, y: f64) -> Option<f64>;

    /// Upward unit normal at a planimetric location.
    fn normal_at(&self, x: f64, y: f64) -> Option<Vec3>;

    /// Discrete reference samples, in a fixed order.
    fn reference_points(&self) -> Vec<Point3<f64>>;
}

impl GroundModel for DtmGrid {
    fn kind(&self) -> &'static str {
        "dtm"
    }

    fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        DtmGrid::height_at(self, x, y)
    }

    fn normal_at(&self, x: f64, y: f64) -> Option<Vec3> {
        DtmGrid::normal_at(self, x, y)
    }

    fn reference_points(&self) -> Vec<Point3<f64>> {
        self.nodes().collect()
    }
}

/// Planar ground polygons (e.g. road surfaces) sampled on a regular grid.
#[derive(Debug, Clone)]
pub struct SurfaceGround {
    pub surfaces: Vec<WallSurface>,
    pub spacing: f64,
}

impl SurfaceGround {
    /// Near-vertical polygons are dropped; they cannot carry a height.
    pub fn new(model: &WallModel, spacing: f64) -> Self {
        let surfaces = model
            .walls
            .iter()
            .filter(|s| s.plane.normal.z.abs() > 0.1)
            .cloned()
            .collect();
        Self { surfaces, spacing }
    }

    fn surface_at(&self, x: f64, y: f64) -> Option<&WallSurface> {
        self.surfaces
            .iter()
            .find(|s| point_in_polygon_xy(x, y, &s.vertices))
    }
}

fn z_on(s: &WallSurface, x: f64, y: f64) -> f64 {
    let n = s.plane.normal;
    -(n.x * x + n.y * y + s.plane.offset) / n.z
}

impl GroundModel for SurfaceGround {
    fn kind(&self) -> &'static str {
        "surface"
    }

    fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        self.surface_at(x, y).map(|s| z_on(s, x, y))
    }

    fn normal_at(&self, x: f64, y: f64) -> Option<Vec3> {
        self.surface_at(x, y).map(|s| {
            let n = s.plane.normal;
            if n.z < 0.0 {
                -n
            } else {
                n
            }
        })
    }

    fn reference_points(&self) -> Vec<Point3<f64>> {
        let mut out = Vec::new();
        for s in &self.surfaces {
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for v in &s.vertices {
                x0 = x0.min(v.x);
                y0 = y0.min(v.y);
                x1 = x1.max(v.x);
                y1 = y1.max(v.y);
            }
            let nx = ((x1 - x0) / self.spacing).floor() as usize;
            let ny = ((y1 - y0) / self.spacing).floor() as usize;
            for j in 0..ny {
                for i in 0..nx {
                    let x = x0 + (i as f64 + 0.5) * self.spacing;
                    let y = y0 + (j as f64 + 0.5) * self.spacing;
                    if point_in_polygon_xy(x, y, &s.vertices) {
                        out.push(Point3::new(x, y, z_on(s, x, y)));
                    }
                }
            }
        }
        out
    }
}

/// Even-odd ray casting on the XY projection.
pub fn point_in_polygon_xy(x: f64, y: f64, poly: &[Point3<f64>]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (&poly[i], &poly[j]);
        if (a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}
